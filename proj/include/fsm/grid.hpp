#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fsm/case_spec.hpp"

namespace fsm {

// Solid fraction of a boundary face interval [lo, hi] given the openings on
// that boundary line.
namespace detail {
struct Interval {
    double lo, hi;
};

inline double overlap(const Interval& a, const Interval& b) {
    return std::max(0.0, std::min(a.hi, b.hi) - std::max(a.lo, b.lo));
}

// Complement of `openings` within [0, extent].
inline std::vector<Interval> solid_intervals(double extent, const std::vector<Interval>& openings) {
    std::vector<Interval> open = openings;
    std::sort(open.begin(), open.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
    std::vector<Interval> solid;
    double cur = 0.0;
    for (const auto& o : open) {
        if (o.lo > cur) solid.push_back({cur, o.lo});
        cur = std::max(cur, o.hi);
    }
    if (cur < extent) solid.push_back({cur, extent});
    return solid;
}

inline double dist_point_to_vertical_segment(double px, double py, double sx, const Interval& seg) {
    double dx = px - sx;
    if (py < seg.lo) return std::hypot(dx, seg.lo - py);
    if (py > seg.hi) return std::hypot(dx, py - seg.hi);
    return std::abs(dx);
}
}  // namespace detail

/// Uniform structured 2D grid over [0,width] x [0,height] with per-cell wall
/// geometry: distance to the nearest solid wall, the cell extent normal to
/// that wall, and a wall-adjacency flag. Inlet/vent openings are not walls.
class StructuredGrid2D {
public:
    StructuredGrid2D() = default;

    // All four boundaries solid.
    StructuredGrid2D(int nx, int ny, double width, double height)
        : StructuredGrid2D(nx, ny, width, height, {}, {}) {}

    // Openings given as y-intervals on the left/right boundary lines.
    StructuredGrid2D(int nx, int ny, double width, double height,
                     std::vector<detail::Interval> left_openings,
                     std::vector<detail::Interval> right_openings)
        : nx_(nx), ny_(ny), width_(width), height_(height) {
        if (nx < 1 || ny < 1) throw std::runtime_error("grid: cell counts must be >= 1");
        if (width <= 0.0 || height <= 0.0) throw std::runtime_error("grid: extents must be positive");
        dx_ = width / nx;
        dy_ = height / ny;
        left_solid_ = detail::solid_intervals(height, left_openings);
        right_solid_ = detail::solid_intervals(height, right_openings);
        compute_wall_geometry();
    }

    static StructuredGrid2D for_case(const CaseSpec& c, int nx, int ny) {
        std::vector<detail::Interval> left, right;
        if (c.has_injection()) {
            auto& inlet_vec = (c.inlet_side == Side::left) ? left : right;
            inlet_vec.push_back({c.inlet_lo, c.inlet_hi});
            auto& vent_vec = (c.vent_side == Side::left) ? left : right;
            vent_vec.push_back({c.vent_lo, c.vent_hi});
        }
        return StructuredGrid2D(nx, ny, c.length, c.height, left, right);
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int cell_count() const { return nx_ * ny_; }
    double dx() const { return dx_; }
    double dy() const { return dy_; }
    double width() const { return width_; }
    double height() const { return height_; }

    int index(int i, int j) const { return j * nx_ + i; }
    double x_center(int i) const { return (i + 0.5) * dx_; }
    double y_center(int j) const { return (j + 0.5) * dy_; }

    double wall_distance(int c) const { return wall_dist_[c]; }
    double cell_width_normal(int c) const { return w_normal_[c]; }
    bool wall_adjacent(int c) const { return wall_adj_[c] != 0; }

    const std::vector<detail::Interval>& left_solid() const { return left_solid_; }
    const std::vector<detail::Interval>& right_solid() const { return right_solid_; }

    // Solid fraction of the left/right boundary face of row j.
    double left_face_solid_fraction(int j) const { return face_solid_fraction(left_solid_, j); }
    double right_face_solid_fraction(int j) const { return face_solid_fraction(right_solid_, j); }

    bool same_shape(const StructuredGrid2D& o) const {
        return nx_ == o.nx_ && ny_ == o.ny_ && width_ == o.width_ && height_ == o.height_;
    }

private:
    double face_solid_fraction(const std::vector<detail::Interval>& solid, int j) const {
        detail::Interval face{j * dy_, (j + 1) * dy_};
        double s = 0.0;
        for (const auto& seg : solid) s += detail::overlap(face, seg);
        return s / dy_;
    }

    void compute_wall_geometry() {
        const int n = nx_ * ny_;
        wall_dist_.assign(n, 0.0);
        w_normal_.assign(n, 0.0);
        wall_adj_.assign(n, 0);
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const double px = x_center(i);
                const double py = y_center(j);
                // horizontal walls (bottom, top) are always fully solid
                double best = std::min(py, height_ - py);
                bool vertical = false;
                for (const auto& seg : left_solid_) {
                    double d = detail::dist_point_to_vertical_segment(px, py, 0.0, seg);
                    if (d < best) { best = d; vertical = true; }
                }
                for (const auto& seg : right_solid_) {
                    double d = detail::dist_point_to_vertical_segment(px, py, width_, seg);
                    if (d < best) { best = d; vertical = true; }
                }
                const int c = index(i, j);
                wall_dist_[c] = best;
                w_normal_[c] = vertical ? dx_ : dy_;

                bool adj = (j == 0) || (j == ny_ - 1);
                if (i == 0 && left_face_solid_fraction(j) >= 0.5) adj = true;
                if (i == nx_ - 1 && right_face_solid_fraction(j) >= 0.5) adj = true;
                wall_adj_[c] = adj ? 1 : 0;
            }
        }
    }

    int nx_ = 0, ny_ = 0;
    double width_ = 0.0, height_ = 0.0;
    double dx_ = 0.0, dy_ = 0.0;
    std::vector<detail::Interval> left_solid_, right_solid_;
    std::vector<double> wall_dist_;
    std::vector<double> w_normal_;
    std::vector<std::uint8_t> wall_adj_;
};

}  // namespace fsm
