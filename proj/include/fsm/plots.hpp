#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/grid.hpp"
#include "fsm/tsne.hpp"
#include "fsm/util.hpp"

namespace fsm {

namespace detail {

inline std::string svg_num(double v) {
    std::ostringstream os;
    os.precision(2);
    os << std::fixed << v;
    return os.str();
}

inline std::string hex_color(double r, double g, double b) {
    auto channel = [](double x) {
        const int v = std::clamp(static_cast<int>(std::lround(x * 255.0)), 0, 255);
        static const char* digits = "0123456789abcdef";
        return std::string{digits[v / 16], digits[v % 16]};
    };
    return "#" + channel(r) + channel(g) + channel(b);
}

/// Diverging blue-grey-red map for signed/field data, t in [0,1].
inline std::string diverging_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const double stops[3][3] = {{0.231, 0.299, 0.754}, {0.865, 0.865, 0.865}, {0.706, 0.016, 0.150}};
    const double s = t * 2.0;
    const int k = s < 1.0 ? 0 : 1;
    const double f = s - k;
    return hex_color(stops[k][0] + f * (stops[k + 1][0] - stops[k][0]),
                     stops[k][1] + f * (stops[k + 1][1] - stops[k][1]),
                     stops[k][2] + f * (stops[k + 1][2] - stops[k][2]));
}

/// Sequential white-to-dark-red map for magnitudes, t in [0,1].
inline std::string sequential_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return hex_color(1.0 - 0.6 * t, 1.0 - 0.95 * t, 1.0 - 0.95 * t);
}

inline void svg_open(std::ostringstream& os, double w, double h) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg_num(w) << "\" height=\"" << svg_num(h)
       << "\" viewBox=\"0 0 " << svg_num(w) << ' ' << svg_num(h) << "\">\n";
    os << "<rect width=\"" << svg_num(w) << "\" height=\"" << svg_num(h) << "\" fill=\"white\"/>\n";
}

inline void svg_text(std::ostringstream& os, double x, double y, const std::string& s, int size = 13) {
    os << "<text x=\"" << svg_num(x) << "\" y=\"" << svg_num(y) << "\" font-family=\"sans-serif\" font-size=\""
       << size << "\" fill=\"black\">" << s << "</text>\n";
}

}  // namespace detail

/// Scatter overlay of an embedding: training rows black, target rows red.
inline void write_tsne_overlay_svg(const std::string& path, const TsneEmbedding& emb,
                                   const std::vector<std::uint8_t>& is_target, const std::string& title) {
    if (emb.rows() == 0) throw std::runtime_error(path + ": empty embedding");
    if (is_target.size() != static_cast<std::size_t>(emb.rows()))
        throw std::runtime_error(path + ": embedding rows and target mask disagree");
    double lo_x = emb.xy[0], hi_x = emb.xy[0], lo_y = emb.xy[1], hi_y = emb.xy[1];
    for (int r = 0; r < emb.rows(); ++r) {
        lo_x = std::min(lo_x, emb.xy[2 * r]);
        hi_x = std::max(hi_x, emb.xy[2 * r]);
        lo_y = std::min(lo_y, emb.xy[2 * r + 1]);
        hi_y = std::max(hi_y, emb.xy[2 * r + 1]);
    }
    const double span_x = std::max(hi_x - lo_x, 1e-12), span_y = std::max(hi_y - lo_y, 1e-12);
    const double size = 640.0, margin = 40.0, plot = size - 2.0 * margin;

    std::ostringstream os;
    detail::svg_open(os, size, size);
    detail::svg_text(os, margin, margin - 16.0, title);
    detail::svg_text(os, margin, margin - 2.0, "black: training rows, red: target rows", 11);
    // training points first so targets stay visible on top
    for (int pass = 0; pass < 2; ++pass)
        for (int r = 0; r < emb.rows(); ++r) {
            if ((is_target[r] != 0) != (pass == 1)) continue;
            const double x = margin + plot * (emb.xy[2 * r] - lo_x) / span_x;
            const double y = margin + plot * (1.0 - (emb.xy[2 * r + 1] - lo_y) / span_y);
            os << "<circle cx=\"" << detail::svg_num(x) << "\" cy=\"" << detail::svg_num(y) << "\" r=\"2\" fill=\""
               << (pass == 1 ? "#c81e1e" : "#000000") << "\" fill-opacity=\"0.6\"/>\n";
        }
    os << "</svg>\n";
    write_file_atomic(path, os.str());
}

struct FieldPanel {
    std::string label;
    const std::vector<double>* values = nullptr;
};

/// Side-by-side cell heatmaps of same-grid fields on a shared color scale.
inline void write_field_panels_svg(const std::string& path, const StructuredGrid2D& grid,
                                   const std::vector<FieldPanel>& panels, const std::string& title) {
    if (panels.empty()) throw std::runtime_error(path + ": no field panels given");
    for (const auto& p : panels) {
        if (p.values == nullptr || p.values->size() != static_cast<std::size_t>(grid.cell_count()))
            throw std::runtime_error(path + ": panel '" + p.label + "' has no same-grid data table");
    }
    double lo = panels[0].values->front(), hi = lo;
    for (const auto& p : panels)
        for (double v : *p.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double span = std::max(hi - lo, 1e-300);

    const double panel_w = 300.0, gap = 24.0, top = 48.0, bottom = 56.0;
    const double panel_h = panel_w * grid.height() / grid.width();
    const double width = gap + panels.size() * (panel_w + gap);
    const double height = top + panel_h + bottom;

    std::ostringstream os;
    detail::svg_open(os, width, height);
    detail::svg_text(os, gap, 24.0, title);
    const double cw = panel_w / grid.nx(), ch = panel_h / grid.ny();
    for (std::size_t p = 0; p < panels.size(); ++p) {
        const double x0 = gap + p * (panel_w + gap);
        detail::svg_text(os, x0, top - 6.0, panels[p].label, 12);
        for (int j = 0; j < grid.ny(); ++j)
            for (int i = 0; i < grid.nx(); ++i) {
                const double v = (*panels[p].values)[grid.index(i, j)];
                const double x = x0 + i * cw;
                const double y = top + (grid.ny() - 1 - j) * ch;
                os << "<rect x=\"" << detail::svg_num(x) << "\" y=\"" << detail::svg_num(y) << "\" width=\""
                   << detail::svg_num(cw + 0.5) << "\" height=\"" << detail::svg_num(ch + 0.5) << "\" fill=\""
                   << detail::diverging_color((v - lo) / span) << "\"/>\n";
            }
        os << "<rect x=\"" << detail::svg_num(x0) << "\" y=\"" << detail::svg_num(top) << "\" width=\""
           << detail::svg_num(panel_w) << "\" height=\"" << detail::svg_num(panel_h)
           << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
    }
    // color bar
    const double bar_y = top + panel_h + 20.0, bar_w = width - 2.0 * gap;
    for (int s = 0; s < 128; ++s)
        os << "<rect x=\"" << detail::svg_num(gap + bar_w * s / 128.0) << "\" y=\"" << detail::svg_num(bar_y)
           << "\" width=\"" << detail::svg_num(bar_w / 128.0 + 0.5) << "\" height=\"10\" fill=\""
           << detail::diverging_color((s + 0.5) / 128.0) << "\"/>\n";
    detail::svg_text(os, gap, bar_y + 24.0, format_double(lo), 11);
    detail::svg_text(os, gap + bar_w - 60.0, bar_y + 24.0, format_double(hi), 11);
    os << "</svg>\n";
    write_file_atomic(path, os.str());
}

/// Single-panel magnitude map (e.g. |error| per cell), white-to-red.
inline void write_error_map_svg(const std::string& path, const StructuredGrid2D& grid,
                                const std::vector<double>& magnitude, const std::string& title) {
    if (magnitude.size() != static_cast<std::size_t>(grid.cell_count()))
        throw std::runtime_error(path + ": magnitude table does not match the grid");
    double hi = 0.0;
    for (double v : magnitude) hi = std::max(hi, std::fabs(v));
    const double span = std::max(hi, 1e-300);

    const double panel_w = 360.0, gap = 24.0, top = 48.0, bottom = 40.0;
    const double panel_h = panel_w * grid.height() / grid.width();
    std::ostringstream os;
    detail::svg_open(os, panel_w + 2.0 * gap, top + panel_h + bottom);
    detail::svg_text(os, gap, 24.0, title);
    const double cw = panel_w / grid.nx(), ch = panel_h / grid.ny();
    for (int j = 0; j < grid.ny(); ++j)
        for (int i = 0; i < grid.nx(); ++i) {
            const double v = std::fabs(magnitude[grid.index(i, j)]);
            os << "<rect x=\"" << detail::svg_num(gap + i * cw) << "\" y=\""
               << detail::svg_num(top + (grid.ny() - 1 - j) * ch) << "\" width=\"" << detail::svg_num(cw + 0.5)
               << "\" height=\"" << detail::svg_num(ch + 0.5) << "\" fill=\"" << detail::sequential_color(v / span)
               << "\"/>\n";
        }
    os << "<rect x=\"" << detail::svg_num(gap) << "\" y=\"" << detail::svg_num(top) << "\" width=\""
       << detail::svg_num(panel_w) << "\" height=\"" << detail::svg_num(panel_h)
       << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
    detail::svg_text(os, gap, top + panel_h + 24.0, "max " + format_double(hi), 11);
    os << "</svg>\n";
    write_file_atomic(path, os.str());
}

}  // namespace fsm
