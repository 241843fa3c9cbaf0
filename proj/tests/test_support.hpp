/// Shared fixtures for the test suite: canonical case specs, synthetic
/// snapshots built from analytic field functions, and scratch-directory
/// plumbing.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "fsm/case_spec.hpp"
#include "fsm/grid.hpp"
#include "fsm/snapshot.hpp"

namespace fsm::test {

/// Standard injection case on a unit cavity; tweak fields per test.
inline CaseSpec basic_case(double length = 1.0, double height = 1.0) {
    CaseSpec c;
    c.id = "T-01";
    c.dataset = "T";
    c.length = length;
    c.height = height;
    c.t_top = celsius_to_kelvin(20.0);
    c.t_inj = celsius_to_kelvin(48.0);
    c.u_inj = 0.3;
    c.inlet_side = Side::left;
    c.inlet_lo = 0.0;
    c.inlet_hi = 0.2 * height;
    c.vent_side = Side::right;
    c.vent_lo = 0.0;
    c.vent_hi = 0.2 * height;
    return c;
}

using FieldFn = std::function<double(double, double)>;

/// Snapshot with every field set from an analytic function of (x, y).
inline FieldSnapshot analytic_snapshot(const CaseSpec& c, int nx, int ny, const FieldFn& fu, const FieldFn& fv,
                                       const FieldFn& ft, const FieldFn& fp, const FieldFn& fk) {
    FieldSnapshot s;
    s.case_spec = c;
    s.grid = StructuredGrid2D::for_case(c, nx, ny);
    s.mesh_size = s.grid.dx();
    s.fidelity = "low";
    const int n = s.grid.cell_count();
    s.u.resize(n);
    s.v.resize(n);
    s.t.resize(n);
    s.p.resize(n);
    s.k.resize(n);
    s.eps.assign(n, 1e-4);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const int idx = s.grid.index(i, j);
            const double x = s.grid.x_center(i), y = s.grid.y_center(j);
            s.u[idx] = fu(x, y);
            s.v[idx] = fv(x, y);
            s.t[idx] = ft(x, y);
            s.p[idx] = fp(x, y);
            s.k[idx] = fk(x, y);
        }
    }
    return s;
}

/// Randomized smooth snapshot for property tests.
inline FieldSnapshot random_snapshot(std::uint64_t seed, int nx = 16, int ny = 16) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> amp(-1.0, 1.0);
    const double a = amp(rng), b = amp(rng), c0 = amp(rng), d = amp(rng);
    CaseSpec c = basic_case();
    return analytic_snapshot(
        c, nx, ny, [&](double x, double y) { return 0.3 * std::sin(2 * x + a) * std::cos(3 * y + b); },
        [&](double x, double y) { return 0.2 * std::cos(x + c0) * std::sin(2 * y + d); },
        [&](double x, double y) { return 300.0 + 15.0 * std::sin(x + b) * std::sin(y + a); },
        [&](double x, double y) { return 101325.0 + 40.0 * std::cos(2 * x + d) * std::cos(y + c0); },
        [&](double x, double y) { return 0.01 * (1.1 + std::sin(x + y + a)); });
}

/// Per-test scratch directory under the build tree, wiped on entry.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const std::filesystem::path dir = std::filesystem::temp_directory_path() / "fsm-tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fsm::test
