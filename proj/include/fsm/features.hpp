#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/fluid.hpp"
#include "fsm/snapshot.hpp"
#include "fsm/util.hpp"

namespace fsm {

enum class FeatureVariant { dimensional, nondimensional };

inline std::string to_string(FeatureVariant v) {
    return v == FeatureVariant::dimensional ? "dimensional" : "nondimensional";
}

inline FeatureVariant variant_from_string(const std::string& s) {
    if (s == "dimensional") return FeatureVariant::dimensional;
    if (s == "nondimensional") return FeatureVariant::nondimensional;
    throw std::runtime_error("unknown feature variant '" + s + "'");
}

// Per-row audit flags.
inline constexpr std::uint8_t kFlagRiAtZeroRe = 1;  // Ri forced to 0 because Re = 0
inline constexpr std::uint8_t kFlagEpsFloored = 2;  // R computed with the eps floor

inline constexpr int kFeatureCount = 30;

// Canonical column order: five derivative features per variable (u, v, T, P,
// k), then the five dimensionless groups.
inline const std::vector<std::string>& feature_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const char* var : {"u", "v", "T", "P", "k"}) {
            const std::string v = var;
            n.push_back("d" + v + "_dx");
            n.push_back("d" + v + "_dy");
            n.push_back("d2" + v + "_dx2");
            n.push_back("d2" + v + "_dy2");
            n.push_back("d2" + v + "_dxdy");
        }
        for (const char* g : {"R", "Re", "Gr", "Ri", "Pr"}) n.push_back(g);
        return n;
    }();
    return names;
}

struct FeatureMatrix {
    std::vector<std::string> names = feature_names();
    std::string case_id;
    double mesh_size = 0.0;
    FeatureVariant variant = FeatureVariant::dimensional;
    std::vector<double> values;       // row-major, rows() x kFeatureCount
    std::vector<std::uint8_t> flags;  // one audit flag byte per row

    int cols() const { return static_cast<int>(names.size()); }
    int rows() const { return names.empty() ? 0 : static_cast<int>(values.size()) / cols(); }
    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * cols() + col]; }
    double& at(int row, int col) { return values[static_cast<std::size_t>(row) * cols() + col]; }

    void validate() const {
        if (names.size() != kFeatureCount) throw std::runtime_error("feature matrix: expected 30 columns");
        if (values.size() % kFeatureCount != 0) throw std::runtime_error("feature matrix: ragged value array");
        if (flags.size() != static_cast<std::size_t>(rows()))
            throw std::runtime_error("feature matrix: flag count does not match row count");
        for (std::size_t i = 0; i < values.size(); ++i)
            if (!std::isfinite(values[i]))
                throw std::runtime_error("feature matrix: non-finite value in column '" +
                                         names[i % kFeatureCount] + "' row " +
                                         std::to_string(i / kFeatureCount));
    }
};

// Gradient block for one variable: d/dx, d/dy, d2/dx2, d2/dy2, d2/dxdy per cell.
struct GradientBlock {
    std::vector<double> dx, dy, dxx, dyy, dxy;
};

class GradientComputer {
public:
    GradientComputer(const FieldSnapshot& s, const FluidProperties& props = FluidProperties{})
        : snap_(s), grid_(s.grid), props_(props) {
        nx_ = grid_.nx();
        ny_ = grid_.ny();
        if (nx_ < 3 || ny_ < 3)
            throw std::runtime_error("gradients: grid " + std::to_string(nx_) + "x" + std::to_string(ny_) +
                                     " is smaller than the 3-point stencil");
        hx_ = grid_.dx();
        hy_ = grid_.dy();
    }

    // var: 0=u 1=v 2=T 3=P 4=k
    GradientBlock compute(int var) const {
        const std::vector<double>& f = field(var);
        const int n = nx_ * ny_;
        GradientBlock g;
        g.dx.resize(n);
        g.dy.resize(n);
        g.dxx.resize(n);
        g.dyy.resize(n);
        g.dxy.resize(n);
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const int c = grid_.index(i, j);
                g.dx[c] = d1_x(f, var, i, j);
                g.dy[c] = d1_y(f, var, i, j);
                g.dxx[c] = d2_x(f, var, i, j);
                g.dyy[c] = d2_y(f, var, i, j);
            }
        }
        // Mixed derivative: x-derivative of the y-derivative field, using
        // interior/one-sided differences (no boundary condition applies to
        // the derivative field itself).
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const int c = grid_.index(i, j);
                if (i > 0 && i < nx_ - 1)
                    g.dxy[c] = (g.dy[c + 1] - g.dy[c - 1]) / (2.0 * hx_);
                else if (i == 0)
                    g.dxy[c] = (-3.0 * g.dy[c] + 4.0 * g.dy[c + 1] - g.dy[c + 2]) / (2.0 * hx_);
                else
                    g.dxy[c] = (3.0 * g.dy[c] - 4.0 * g.dy[c - 1] + g.dy[c - 2]) / (2.0 * hx_);
            }
        }
        return g;
    }

private:
    const std::vector<double>& field(int var) const {
        switch (var) {
            case 0: return snap_.u;
            case 1: return snap_.v;
            case 2: return snap_.t;
            case 3: return snap_.p;
            default: return snap_.k;
        }
    }

    // Ghost value just outside a boundary face, or NaN when the boundary
    // condition does not define one (vent outflow).
    //
    // side: 0=left 1=right 2=bottom 3=top
    double ghost(const std::vector<double>& f, int var, int i, int j, int side) const {
        const int c = grid_.index(i, j);
        const double fc = f[c];
        const CaseSpec& cs = snap_.case_spec;

        if (side == 0 || side == 1) {
            const bool left = side == 0;
            const double solid = left ? grid_.left_face_solid_fraction(j) : grid_.right_face_solid_fraction(j);
            if (solid >= 0.5) return solid_wall_ghost(var, fc, /*wall_t=*/fc);
            // open face: inlet or vent
            const Side s = left ? Side::left : Side::right;
            const double yc = grid_.y_center(j);
            const bool is_inlet = cs.has_injection() && cs.inlet_side == s && yc >= cs.inlet_lo && yc <= cs.inlet_hi;
            if (is_inlet) {
                switch (var) {
                    case 0: return 2.0 * (left ? cs.u_inj : -cs.u_inj) - fc;  // u Dirichlet
                    case 1: return -fc;                                       // v = 0 across the opening
                    case 2: return 2.0 * cs.t_inj - fc;                       // T Dirichlet
                    default: return fc;                                       // P, k: zero-gradient
                }
            }
            return std::numeric_limits<double>::quiet_NaN();  // vent: one-sided
        }

        const bool bottom = side == 2;
        if (var == 2) {  // temperature walls
            if (bottom) {
                if (cs.bottom_mode == BottomWallMode::fixed_temperature) return 2.0 * cs.t_bottom - fc;
                return fc;  // adiabatic
            }
            if (cs.top_mode == TopWallMode::fixed_temperature) return 2.0 * cs.t_top - fc;
            return std::numeric_limits<double>::quiet_NaN();  // fixed-flux: one-sided
        }
        return solid_wall_ghost(var, fc, fc);
    }

    // Ghost across a solid wall: no-slip for velocity, zero-gradient for
    // P and k (T handled separately by wall mode).
    static double solid_wall_ghost(int var, double fc, double /*wall_t*/) {
        if (var == 0 || var == 1) return -fc;
        return fc;
    }

    double d1_x(const std::vector<double>& f, int var, int i, int j) const {
        const int c = grid_.index(i, j);
        const double gm = (i == 0) ? ghost(f, var, i, j, 0) : f[c - 1];
        const double gp = (i == nx_ - 1) ? ghost(f, var, i, j, 1) : f[c + 1];
        if (std::isnan(gm)) return (-3.0 * f[c] + 4.0 * f[c + 1] - f[c + 2]) / (2.0 * hx_);
        if (std::isnan(gp)) return (3.0 * f[c] - 4.0 * f[c - 1] + f[c - 2]) / (2.0 * hx_);
        return (gp - gm) / (2.0 * hx_);
    }

    double d1_y(const std::vector<double>& f, int var, int i, int j) const {
        const int c = grid_.index(i, j);
        const double gm = (j == 0) ? ghost(f, var, i, j, 2) : f[c - nx_];
        const double gp = (j == ny_ - 1) ? ghost(f, var, i, j, 3) : f[c + nx_];
        if (std::isnan(gm)) return (-3.0 * f[c] + 4.0 * f[c + nx_] - f[c + 2 * nx_]) / (2.0 * hy_);
        if (std::isnan(gp)) return (3.0 * f[c] - 4.0 * f[c - nx_] + f[c - 2 * nx_]) / (2.0 * hy_);
        return (gp - gm) / (2.0 * hy_);
    }

    double d2_x(const std::vector<double>& f, int var, int i, int j) const {
        const int c = grid_.index(i, j);
        const double gm = (i == 0) ? ghost(f, var, i, j, 0) : f[c - 1];
        const double gp = (i == nx_ - 1) ? ghost(f, var, i, j, 1) : f[c + 1];
        if (std::isnan(gm)) return one_sided_second(f[c], f[c + 1], f[c + 2], (nx_ > 3) ? f[c + 3] : f[c + 2], nx_ > 3, hx_);
        if (std::isnan(gp)) return one_sided_second(f[c], f[c - 1], f[c - 2], (nx_ > 3) ? f[c - 3] : f[c - 2], nx_ > 3, hx_);
        return (gp - 2.0 * f[c] + gm) / (hx_ * hx_);
    }

    double d2_y(const std::vector<double>& f, int var, int i, int j) const {
        const int c = grid_.index(i, j);
        const double gm = (j == 0) ? ghost(f, var, i, j, 2) : f[c - nx_];
        const double gp = (j == ny_ - 1) ? ghost(f, var, i, j, 3) : f[c + nx_];
        if (std::isnan(gm))
            return one_sided_second(f[c], f[c + nx_], f[c + 2 * nx_], (ny_ > 3) ? f[c + 3 * nx_] : f[c + 2 * nx_],
                                    ny_ > 3, hy_);
        if (std::isnan(gp))
            return one_sided_second(f[c], f[c - nx_], f[c - 2 * nx_], (ny_ > 3) ? f[c - 3 * nx_] : f[c - 2 * nx_],
                                    ny_ > 3, hy_);
        return (gp - 2.0 * f[c] + gm) / (hy_ * hy_);
    }

    // Second derivative at the boundary cell from in-domain values only:
    // (2, -5, 4, -1)/h^2 when four points exist, else the 3-point first-order
    // form (1, -2, 1)/h^2.
    static double one_sided_second(double f0, double f1, double f2, double f3, bool four_points, double h) {
        if (four_points) return (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h);
        return (f0 - 2.0 * f1 + f2) / (h * h);
    }

    const FieldSnapshot& snap_;
    const StructuredGrid2D& grid_;
    FluidProperties props_;
    int nx_, ny_;
    double hx_, hy_;
};

// ---- dimensionless groups ----------------------------------------------

// Blending exponent between wall and free formulations.
inline double gamma_exponent(bool wall_adjacent, double w, double y) {
    if (!wall_adjacent) return 0.0;
    return std::min(std::max(0.0, w / y - 1.0), 1.0);
}

struct GroupInputs {
    double u = 0.0, v = 0.0, t = 300.0, p = 101325.0, k = 0.0, eps = 1e-8;
    bool wall_adjacent = false;
    double wall_distance = 1.0;      // y
    double cell_width_normal = 1.0;  // w
    double dx = 1.0, dy = 1.0;
    double rho_wall_ref = 0.0;  // density at the relevant wall temperature
};

struct GroupValues {
    double r = 0.0, re = 0.0, gr = 0.0, ri = 0.0, pr = 0.0;
    std::uint8_t flags = 0;
};

inline GroupValues dimensionless_groups(const GroupInputs& in, const FluidProperties& props,
                                        double eps_floor = 1e-8) {
    GroupValues out;
    const double rho = props.density(in.t, in.p);
    const double mu = props.dynamic_viscosity(in.t);
    const double nu = mu / rho;
    const double speed = std::hypot(in.u, in.v);
    const double gamma = gamma_exponent(in.wall_adjacent, in.cell_width_normal, in.wall_distance);
    const double dh_f = 2.0 * in.dx * in.dy / (in.dx + in.dy);
    const double dh_w = 2.0 * in.wall_distance;

    const double re_w = speed * dh_w / nu;
    const double re_f = speed * dh_f / nu;
    if (gamma <= 0.0)
        out.re = re_f;
    else if (gamma >= 1.0)
        out.re = re_w;
    else
        out.re = std::pow(re_w, gamma) * std::pow(re_f, 1.0 - gamma);

    const double drho = in.rho_wall_ref - rho;
    const double gr_w = props.g * drho * rho * dh_w * dh_w * dh_w / (mu * mu);
    const double gr_f = props.g * drho * rho * dh_f * dh_f * dh_f / (mu * mu);
    if (gamma <= 0.0)
        out.gr = gr_f;
    else if (gamma >= 1.0)
        out.gr = gr_w;
    else {
        const double sign = (drho > 0.0) - (drho < 0.0);
        out.gr = sign * std::pow(std::abs(gr_w), gamma) * std::pow(std::abs(gr_f), 1.0 - gamma);
    }

    if (out.re > 0.0) {
        out.ri = out.gr / (out.re * out.re);
    } else {
        out.ri = 0.0;
        out.flags |= kFlagRiAtZeroRe;
    }

    out.pr = props.cp * mu / props.lambda;

    double eps = in.eps;
    if (eps < eps_floor) {
        eps = eps_floor;
        out.flags |= kFlagEpsFloored;
    }
    out.r = props.c_mu * rho * in.k * in.k / (eps * mu);
    return out;
}

// Density at the wall surface relevant for the buoyancy groups: the nearest
// solid wall's temperature for wall-adjacent cells, the top-wall reference
// (fixed-T mode) or the domain mean temperature (fixed-flux mode) otherwise.
inline double wall_reference_temperature(const FieldSnapshot& s, int i, int j, double mean_t) {
    const CaseSpec& cs = s.case_spec;
    const StructuredGrid2D& g = s.grid;
    const int c = g.index(i, j);
    if (!g.wall_adjacent(c)) {
        if (cs.top_mode == TopWallMode::fixed_temperature) return cs.t_top;
        return mean_t;
    }
    // candidate walls this cell actually touches, by face distance
    double best_d = std::numeric_limits<double>::max();
    double best_t = s.t[c];
    auto consider = [&](double d, double tw) {
        if (d < best_d) {
            best_d = d;
            best_t = tw;
        }
    };
    if (j == 0)
        consider(0.5 * g.dy(), cs.bottom_mode == BottomWallMode::fixed_temperature ? cs.t_bottom : s.t[c]);
    if (j == g.ny() - 1)
        consider(0.5 * g.dy(), cs.top_mode == TopWallMode::fixed_temperature ? cs.t_top : s.t[c]);
    if (i == 0 && g.left_face_solid_fraction(j) >= 0.5) consider(0.5 * g.dx(), s.t[c]);   // adiabatic sidewall
    if (i == g.nx() - 1 && g.right_face_solid_fraction(j) >= 0.5) consider(0.5 * g.dx(), s.t[c]);
    return best_t;
}

// ---- extraction ----------------------------------------------------------

inline FeatureMatrix extract_features(const FieldSnapshot& s, FeatureVariant variant,
                                      const FluidProperties& props = FluidProperties{});

// Divide every gradient column by its global reference scale; the groups
// pass through unchanged.
inline FeatureMatrix nondimensionalize(const FeatureMatrix& m, const CaseSpec& cs) {
    if (m.variant == FeatureVariant::nondimensional)
        throw std::runtime_error("nondimensionalize: matrix for case '" + m.case_id +
                                 "' is already nondimensional");
    if (cs.u_inj <= 0.0)
        throw std::runtime_error("nondimensionalize: case '" + cs.id + "' has no injection velocity scale");
    if (cs.t_inj <= 0.0 || cs.p_ini <= 0.0 || cs.length <= 0.0 || cs.height <= 0.0)
        throw std::runtime_error("nondimensionalize: case '" + cs.id + "' lacks positive global references");

    const double w = cs.length, h = cs.height;
    // value scales per variable: u, v -> u_inj; T -> T_inj; P -> P_ini; k -> u_inj^2
    const std::array<double, 5> vscale = {cs.u_inj, cs.u_inj, cs.t_inj, cs.p_ini, cs.u_inj * cs.u_inj};

    FeatureMatrix out = m;
    out.variant = FeatureVariant::nondimensional;
    const int n = m.rows();
    for (int r = 0; r < n; ++r) {
        for (int v = 0; v < 5; ++v) {
            const int base = 5 * v;
            out.at(r, base + 0) = m.at(r, base + 0) / (vscale[v] / w);
            out.at(r, base + 1) = m.at(r, base + 1) / (vscale[v] / h);
            out.at(r, base + 2) = m.at(r, base + 2) / (vscale[v] / (w * w));
            out.at(r, base + 3) = m.at(r, base + 3) / (vscale[v] / (h * h));
            out.at(r, base + 4) = m.at(r, base + 4) / (vscale[v] / (w * h));
        }
    }
    return out;
}

inline FeatureMatrix extract_features(const FieldSnapshot& s, FeatureVariant variant,
                                      const FluidProperties& props) {
    s.validate();
    const StructuredGrid2D& g = s.grid;
    const int n = g.cell_count();

    GradientComputer gc(s, props);
    std::array<GradientBlock, 5> blocks;
    for (int v = 0; v < 5; ++v) blocks[v] = gc.compute(v);

    double mean_t = 0.0;
    for (double tv : s.t) mean_t += tv;
    mean_t /= n;

    FeatureMatrix m;
    m.case_id = s.case_spec.id;
    m.mesh_size = s.mesh_size;
    m.variant = FeatureVariant::dimensional;
    m.values.resize(static_cast<std::size_t>(n) * kFeatureCount);
    m.flags.resize(n);

    for (int j = 0; j < g.ny(); ++j) {
        for (int i = 0; i < g.nx(); ++i) {
            const int c = g.index(i, j);
            for (int v = 0; v < 5; ++v) {
                const GradientBlock& b = blocks[v];
                m.at(c, 5 * v + 0) = b.dx[c];
                m.at(c, 5 * v + 1) = b.dy[c];
                m.at(c, 5 * v + 2) = b.dxx[c];
                m.at(c, 5 * v + 3) = b.dyy[c];
                m.at(c, 5 * v + 4) = b.dxy[c];
            }
            GroupInputs gi;
            gi.u = s.u[c];
            gi.v = s.v[c];
            gi.t = s.t[c];
            gi.p = s.p[c];
            gi.k = s.k[c];
            gi.eps = s.eps[c];
            gi.wall_adjacent = g.wall_adjacent(c);
            gi.wall_distance = g.wall_distance(c);
            gi.cell_width_normal = g.cell_width_normal(c);
            gi.dx = g.dx();
            gi.dy = g.dy();
            gi.rho_wall_ref = props.density(wall_reference_temperature(s, i, j, mean_t), s.p[c]);
            const GroupValues gv = dimensionless_groups(gi, props);
            m.at(c, 25) = gv.r;
            m.at(c, 26) = gv.re;
            m.at(c, 27) = gv.gr;
            m.at(c, 28) = gv.ri;
            m.at(c, 29) = gv.pr;
            m.flags[c] = gv.flags;
        }
    }
    m.validate();
    if (variant == FeatureVariant::nondimensional) return nondimensionalize(m, s.case_spec);
    return m;
}

// ---- persistence ----------------------------------------------------------

inline void write_feature_matrix(std::ostream& os, const FeatureMatrix& m) {
    TextHeader h;
    h.set("case", m.case_id);
    h.set_double("mesh_size", m.mesh_size);
    h.set("variant", to_string(m.variant));
    h.set_long("rows", m.rows());
    h.write(os);
    os << "cell flags";
    for (const auto& nm : m.names) os << ' ' << nm;
    os << '\n';
    for (int r = 0; r < m.rows(); ++r) {
        os << r << ' ' << static_cast<int>(m.flags[r]);
        for (int c = 0; c < kFeatureCount; ++c) os << ' ' << format_double(m.at(r, c));
        os << '\n';
    }
}

inline FeatureMatrix read_feature_matrix(std::istream& is, const std::string& what = "feature matrix") {
    std::string first_body;
    TextHeader h = read_text_header(is, first_body);
    FeatureMatrix m;
    m.case_id = h.get("case");
    m.mesh_size = h.get_double("mesh_size");
    m.variant = variant_from_string(h.get("variant"));
    const long rows = h.get_long("rows");

    std::vector<std::string> cols = split_ws(first_body);
    const auto& want = feature_names();
    if (cols.size() != want.size() + 2 || cols[0] != "cell" || cols[1] != "flags")
        throw std::runtime_error(what + ": unexpected column header");
    for (std::size_t i = 0; i < want.size(); ++i)
        if (cols[i + 2] != want[i])
            throw std::runtime_error(what + ": unknown feature column '" + cols[i + 2] + "' (expected '" +
                                     want[i] + "')");

    m.values.resize(static_cast<std::size_t>(rows) * kFeatureCount);
    m.flags.resize(rows);
    std::string line;
    for (long r = 0; r < rows; ++r) {
        if (!std::getline(is, line))
            throw std::runtime_error(what + ": truncated at row " + std::to_string(r) + " of " +
                                     std::to_string(rows));
        const std::vector<std::string> tok = split_ws(line);
        if (tok.size() != kFeatureCount + 2)
            throw std::runtime_error(what + ": row " + std::to_string(r) + " has " +
                                     std::to_string(tok.size()) + " fields, expected " +
                                     std::to_string(kFeatureCount + 2));
        m.flags[r] = static_cast<std::uint8_t>(parse_long(tok[1], what + " flags"));
        for (int c = 0; c < kFeatureCount; ++c)
            m.values[static_cast<std::size_t>(r) * kFeatureCount + c] = parse_double(tok[c + 2], what);
    }
    m.validate();
    return m;
}

inline void save_feature_matrix(const std::string& path, const FeatureMatrix& m) {
    std::ostringstream os;
    write_feature_matrix(os, m);
    write_file_atomic(path, os.str());
}

inline FeatureMatrix load_feature_matrix(const std::string& path) {
    try {
        std::istringstream is(read_file(path));
        return read_feature_matrix(is);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

}  // namespace fsm
