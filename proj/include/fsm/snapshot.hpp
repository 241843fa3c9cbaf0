#pragma once

#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/case_spec.hpp"
#include "fsm/grid.hpp"
#include "fsm/util.hpp"

namespace fsm {

/// Steady-state cell-centered fields on a structured grid, together with the
/// case the fields were computed for.
struct FieldSnapshot {
    CaseSpec case_spec;
    StructuredGrid2D grid;
    double mesh_size = 0.0;  // characteristic spacing used as the mesh label
    std::string fidelity;    // "low" or "high"
    std::vector<double> u, v, t, p, k, eps;

    int cell_count() const { return grid.cell_count(); }

    void validate() const {
        const std::size_t n = static_cast<std::size_t>(grid.cell_count());
        const char* names[] = {"u", "v", "T", "P", "k", "eps"};
        const std::vector<double>* fields[] = {&u, &v, &t, &p, &k, &eps};
        for (int f = 0; f < 6; ++f) {
            if (fields[f]->size() != n)
                throw std::runtime_error(std::string("snapshot: field '") + names[f] + "' has " +
                                         std::to_string(fields[f]->size()) + " values, expected " +
                                         std::to_string(n));
            for (std::size_t r = 0; r < n; ++r) {
                if (!std::isfinite((*fields[f])[r]))
                    throw std::runtime_error(std::string("snapshot: non-finite value in column '") + names[f] +
                                             "' at row " + std::to_string(r));
            }
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (t[r] <= 0.0)
                throw std::runtime_error("snapshot: non-positive temperature at row " + std::to_string(r));
            if (k[r] < 0.0)
                throw std::runtime_error("snapshot: negative turbulent kinetic energy at row " + std::to_string(r));
        }
    }
};

inline void case_to_header(const CaseSpec& c, TextHeader& h) {
    h.set("case_id", c.id);
    h.set("dataset", c.dataset);
    h.set_double("length", c.length);
    h.set_double("height", c.height);
    h.set("top_mode", to_string(c.top_mode));
    h.set_double("t_top", c.t_top);
    h.set_double("q_top", c.q_top);
    h.set("bottom_mode", to_string(c.bottom_mode));
    h.set_double("t_bottom", c.t_bottom);
    h.set_double("t_inj", c.t_inj);
    h.set_double("u_inj", c.u_inj);
    h.set_double("p_ini", c.p_ini);
    h.set("inlet_side", to_string(c.inlet_side));
    h.set_double("inlet_lo", c.inlet_lo);
    h.set_double("inlet_hi", c.inlet_hi);
    h.set("vent_side", to_string(c.vent_side));
    h.set_double("vent_lo", c.vent_lo);
    h.set_double("vent_hi", c.vent_hi);
}

inline CaseSpec case_from_header(const TextHeader& h) {
    CaseSpec c;
    c.id = h.get("case_id");
    c.dataset = h.get_or("dataset", "");
    c.length = h.get_double("length");
    c.height = h.get_double("height");
    c.top_mode = top_mode_from_string(h.get("top_mode"));
    c.t_top = h.get_double("t_top");
    c.q_top = h.get_double("q_top");
    c.bottom_mode = bottom_mode_from_string(h.get("bottom_mode"));
    c.t_bottom = h.get_double("t_bottom");
    c.t_inj = h.get_double("t_inj");
    c.u_inj = h.get_double("u_inj");
    c.p_ini = h.get_double("p_ini");
    c.inlet_side = side_from_string(h.get("inlet_side"));
    c.inlet_lo = h.get_double("inlet_lo");
    c.inlet_hi = h.get_double("inlet_hi");
    c.vent_side = side_from_string(h.get("vent_side"));
    c.vent_lo = h.get_double("vent_lo");
    c.vent_hi = h.get_double("vent_hi");
    return c;
}

/// Text form: `# key = value` header lines, a column-name row, then one row
/// per cell in row-major order (i fastest). Doubles use shortest
/// round-trip formatting, so write/read/write is byte-identical.
inline void write_snapshot(std::ostream& os, const FieldSnapshot& snap) {
    TextHeader h;
    case_to_header(snap.case_spec, h);
    h.set_long("nx", snap.grid.nx());
    h.set_long("ny", snap.grid.ny());
    h.set_double("mesh_size", snap.mesh_size);
    h.set("fidelity", snap.fidelity);
    h.write(os);
    os << "i j x y u v T P k eps\n";
    for (int j = 0; j < snap.grid.ny(); ++j) {
        for (int i = 0; i < snap.grid.nx(); ++i) {
            const int c = snap.grid.index(i, j);
            os << i << ' ' << j << ' ' << format_double(snap.grid.x_center(i)) << ' '
               << format_double(snap.grid.y_center(j)) << ' ' << format_double(snap.u[c]) << ' '
               << format_double(snap.v[c]) << ' ' << format_double(snap.t[c]) << ' '
               << format_double(snap.p[c]) << ' ' << format_double(snap.k[c]) << ' '
               << format_double(snap.eps[c]) << '\n';
        }
    }
}

inline FieldSnapshot ingest_snapshot(std::istream& is) {
    std::string first_body;
    TextHeader h = read_text_header(is, first_body);
    FieldSnapshot snap;
    snap.case_spec = case_from_header(h);
    const int nx = static_cast<int>(h.get_long("nx"));
    const int ny = static_cast<int>(h.get_long("ny"));
    snap.mesh_size = h.get_double("mesh_size");
    snap.fidelity = h.get_or("fidelity", "low");
    snap.grid = StructuredGrid2D::for_case(snap.case_spec, nx, ny);

    // Column header row.
    std::vector<std::string> cols = split_ws(first_body);
    const std::vector<std::string> required = {"i", "j", "x", "y", "u", "v", "T", "P", "k", "eps"};
    std::map<std::string, int> col_of;
    for (std::size_t c = 0; c < cols.size(); ++c) col_of[cols[c]] = static_cast<int>(c);
    for (const auto& name : required) {
        if (!col_of.count(name)) throw std::runtime_error("snapshot: missing column '" + name + "'");
    }

    const std::size_t n = static_cast<std::size_t>(nx) * ny;
    snap.u.assign(n, 0.0);
    snap.v.assign(n, 0.0);
    snap.t.assign(n, 0.0);
    snap.p.assign(n, 0.0);
    snap.k.assign(n, 0.0);
    snap.eps.assign(n, 0.0);

    std::string line;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        std::string body = trim(line);
        if (body.empty() || body[0] == '#') continue;
        std::vector<std::string> tok = split_ws(body);
        if (tok.size() != cols.size())
            throw std::runtime_error("snapshot: row " + std::to_string(rows) + " has " +
                                     std::to_string(tok.size()) + " fields, expected " +
                                     std::to_string(cols.size()));
        if (rows >= n) throw std::runtime_error("snapshot: more data rows than nx*ny = " + std::to_string(n));
        const long i = parse_long(tok[col_of["i"]]);
        const long j = parse_long(tok[col_of["j"]]);
        if (i < 0 || i >= nx || j < 0 || j >= ny)
            throw std::runtime_error("snapshot: cell index (" + std::to_string(i) + "," + std::to_string(j) +
                                     ") out of range at row " + std::to_string(rows));
        const int c = snap.grid.index(static_cast<int>(i), static_cast<int>(j));
        struct ColField {
            const char* name;
            std::vector<double>* dst;
        };
        const ColField fields[] = {{"u", &snap.u}, {"v", &snap.v}, {"T", &snap.t},
                                   {"P", &snap.p}, {"k", &snap.k}, {"eps", &snap.eps}};
        for (const auto& f : fields) {
            double val = parse_double(tok[col_of[f.name]]);
            if (!std::isfinite(val))
                throw std::runtime_error(std::string("snapshot: non-finite value in column '") + f.name +
                                         "' at row " + std::to_string(rows));
            (*f.dst)[c] = val;
        }
        ++rows;
    }
    if (rows != n)
        throw std::runtime_error("snapshot: found " + std::to_string(rows) + " data rows, expected " +
                                 std::to_string(n));
    snap.validate();
    return snap;
}

inline void save_snapshot(const std::string& path, const FieldSnapshot& snap) {
    std::ostringstream os;
    write_snapshot(os, snap);
    write_file_atomic(path, os.str());
}

inline FieldSnapshot load_snapshot(const std::string& path) {
    std::istringstream is(read_file(path));
    try {
        return ingest_snapshot(is);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

/// Area-weighted restriction of a fine snapshot onto a coarser grid of the
/// same physical extents. The fine cell counts must be integer multiples of
/// the coarse ones so that coarse cells are exact unions of fine cells.
inline FieldSnapshot project_fine_to_coarse(const FieldSnapshot& fine, const StructuredGrid2D& coarse) {
    const StructuredGrid2D& fg = fine.grid;
    if (std::abs(fg.width() - coarse.width()) > 1e-12 * coarse.width() ||
        std::abs(fg.height() - coarse.height()) > 1e-12 * coarse.height())
        throw std::runtime_error("projection: fine and coarse grids cover different domains");
    if (fg.nx() % coarse.nx() != 0 || fg.ny() % coarse.ny() != 0)
        throw std::runtime_error("projection: fine grid " + std::to_string(fg.nx()) + "x" +
                                 std::to_string(fg.ny()) + " does not nest onto coarse " +
                                 std::to_string(coarse.nx()) + "x" + std::to_string(coarse.ny()));
    const int rx = fg.nx() / coarse.nx();
    const int ry = fg.ny() / coarse.ny();

    FieldSnapshot out;
    out.case_spec = fine.case_spec;
    out.grid = coarse;
    out.mesh_size = std::max(coarse.dx(), coarse.dy());
    out.fidelity = fine.fidelity;
    const std::size_t n = static_cast<std::size_t>(coarse.cell_count());
    out.u.assign(n, 0.0);
    out.v.assign(n, 0.0);
    out.t.assign(n, 0.0);
    out.p.assign(n, 0.0);
    out.k.assign(n, 0.0);
    out.eps.assign(n, 0.0);

    const double inv = 1.0 / (static_cast<double>(rx) * ry);
    for (int J = 0; J < coarse.ny(); ++J) {
        for (int I = 0; I < coarse.nx(); ++I) {
            double su = 0, sv = 0, st = 0, sp = 0, sk = 0, se = 0;
            for (int j = J * ry; j < (J + 1) * ry; ++j) {
                for (int i = I * rx; i < (I + 1) * rx; ++i) {
                    const int c = fg.index(i, j);
                    su += fine.u[c];
                    sv += fine.v[c];
                    st += fine.t[c];
                    sp += fine.p[c];
                    sk += fine.k[c];
                    se += fine.eps[c];
                }
            }
            const int C = coarse.index(I, J);
            out.u[C] = su * inv;
            out.v[C] = sv * inv;
            out.t[C] = st * inv;
            out.p[C] = sp * inv;
            out.k[C] = sk * inv;
            out.eps[C] = se * inv;
        }
    }
    return out;
}

}  // namespace fsm
