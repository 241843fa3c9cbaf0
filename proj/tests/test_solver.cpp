/// Solver sanity: analytic conduction profile, zero-forcing equilibrium,
/// left-right mirror symmetry, conservation statistics, determinism, and the
/// case-matrix runner.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fsm/solver.hpp"
#include "test_support.hpp"

using namespace fsm;
using namespace fsm::test;

TEST_CASE("no forcing and a matched top wall leave the cavity at rest", "[solver]") {
    CaseSpec c = basic_case();
    c.u_inj = 0.0;
    c.inlet_hi = c.inlet_lo;  // no inlet opening
    c.vent_hi = c.vent_lo;
    c.t_top = c.t_inj = 293.15;
    SolverConfig cfg;
    cfg.tolerance = 1e-8;
    const FieldSnapshot s = solve_steady(c, StructuredGrid2D::for_case(c, 12, 12), cfg);
    for (int idx = 0; idx < s.cell_count(); ++idx) {
        CHECK(std::abs(s.u[idx]) < 1e-10);
        CHECK(std::abs(s.v[idx]) < 1e-10);
        CHECK(s.t[idx] == Catch::Approx(293.15).epsilon(1e-9));
    }
}

TEST_CASE("conduction-only case matches the 1D analytic profile", "[solver]") {
    CaseSpec c = basic_case();
    c.u_inj = 0.0;
    c.inlet_hi = c.inlet_lo;
    c.vent_hi = c.vent_lo;
    c.t_top = 313.15;
    c.bottom_mode = BottomWallMode::fixed_temperature;
    c.t_bottom = 293.15;
    SolverConfig cfg;
    cfg.tolerance = 1e-10;
    cfg.boussinesq = false;  // pure conduction, no buoyant motion
    const int ny = 16;
    const FieldSnapshot s = solve_steady(c, StructuredGrid2D::for_case(c, 8, ny), cfg);
    for (int j = 0; j < ny; ++j) {
        const double y = s.grid.y_center(j);
        const double exact = c.t_bottom + (c.t_top - c.t_bottom) * y / c.height;
        for (int i = 0; i < 8; ++i) {
            const double got = s.t[s.grid.index(i, j)];
            CHECK(std::abs(got - exact) / exact < 1e-6);
        }
    }
}

TEST_CASE("mirrored inlet and vent mirror the steady flow field", "[solver][.slow]") {
    CaseSpec c = basic_case();
    CaseSpec m = c;
    m.inlet_side = Side::right;
    m.vent_side = Side::left;
    SolverConfig cfg;
    cfg.tolerance = 1e-6;
    const int n = 24;
    const StructuredGrid2D g = StructuredGrid2D::for_case(c, n, n);
    const FieldSnapshot a = solve_steady(c, g, cfg);
    const FieldSnapshot b = solve_steady(m, g, cfg);
    double umax = 0.0, worst = 0.0, worst_t = 0.0;
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const int idx = g.index(i, j), mir = g.index(n - 1 - i, j);
            umax = std::max(umax, std::hypot(a.u[idx], a.v[idx]));
            worst = std::max({worst, std::abs(a.u[idx] + b.u[mir]), std::abs(a.v[idx] - b.v[mir])});
            worst_t = std::max(worst_t, std::abs(a.t[idx] - b.t[mir]));
        }
    }
    INFO("velocity scale " << umax << ", worst mirror defect " << worst << ", temperature defect " << worst_t);
    CHECK(worst / umax < 10.0 * cfg.tolerance);
    CHECK(worst_t < 1e-3);
}

TEST_CASE("converged solve satisfies local mass and global energy conservation", "[solver]") {
    const CaseSpec c = basic_case();
    SolverConfig cfg;
    cfg.tolerance = 1e-6;
    SolveStats st;
    const FieldSnapshot s = solve_steady(c, StructuredGrid2D::for_case(c, 20, 20), cfg, nullptr, &st);
    s.validate();
    CHECK(st.converged);
    CHECK(st.max_cell_mass_imbalance < 1e-8);
    CHECK(st.energy_balance_error < 0.02);
    CHECK(st.heat_in > 0.0);
}

TEST_CASE("same case and config reproduce the solution bitwise", "[solver]") {
    const CaseSpec c = basic_case();
    SolverConfig cfg;
    cfg.tolerance = 1e-5;
    const StructuredGrid2D g = StructuredGrid2D::for_case(c, 15, 15);
    const FieldSnapshot a = solve_steady(c, g, cfg);
    const FieldSnapshot b = solve_steady(c, g, cfg);
    CHECK(a.u == b.u);
    CHECK(a.v == b.v);
    CHECK(a.t == b.t);
    CHECK(a.p == b.p);
    CHECK(a.k == b.k);
    CHECK(a.eps == b.eps);
}

TEST_CASE("mesh-size parsing tiles the domain or rejects", "[solver]") {
    const CaseSpec c = basic_case();
    const StructuredGrid2D g = grid_for_mesh_size(c, 1.0 / 25.0);
    CHECK(g.nx() == 25);
    CHECK(g.ny() == 25);
    CHECK_THROWS_WITH(grid_for_mesh_size(c, 0.15), Catch::Matchers::ContainsSubstring("does not tile"));
    CHECK_THROWS(grid_for_mesh_size(c, -0.1));

    const CaseSpec rect = basic_case(1.0, 0.8);
    const StructuredGrid2D gr = grid_for_mesh_size(rect, 0.1);
    CHECK(gr.nx() == 10);
    CHECK(gr.ny() == 8);
}

TEST_CASE("case matrix runs one fine and one coarse solve per request entry", "[solver][.slow]") {
    CaseSpec c1 = basic_case();
    c1.id = "T-01";
    CaseSpec c2 = basic_case();
    c2.id = "T-02";
    c2.t_inj = celsius_to_kelvin(40.0);
    SolverConfig lo, hi;
    lo.tolerance = 1e-4;
    hi.tolerance = 1e-4;
    std::vector<CaseRunRequest> reqs;
    reqs.push_back({c1, {1.0 / 4.0, 1.0 / 6.0}, 12, 12});
    reqs.push_back({c2, {1.0 / 4.0, 1.0 / 6.0}, 12, 12});
    const CaseMatrixResult res = run_case_matrix(reqs, lo, hi, 1);
    REQUIRE(res.snapshots.size() == 6);  // (1 fine + 2 coarse) x 2 cases
    REQUIRE(res.manifest.size() == 6);
    int fine = 0, coarse = 0, coarse_cells = 0;
    for (std::size_t i = 0; i < res.snapshots.size(); ++i) {
        const auto& rec = res.manifest[i];
        CHECK(res.snapshots[i].fidelity == rec.fidelity);
        CHECK(rec.iterations > 0);
        if (rec.fidelity == "high") {
            ++fine;
            CHECK(rec.nx == 12);
        } else {
            ++coarse;
            coarse_cells += rec.nx * rec.ny;
        }
    }
    CHECK(fine == 2);
    CHECK(coarse == 4);
    CHECK(coarse_cells == 2 * (16 + 36));  // per-case record count is the sum over meshes
}
