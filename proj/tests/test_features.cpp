/// Feature extraction oracles: fluid-property formulas, gradient-operator
/// exactness and convergence order, dimensionless-group identities, and the
/// nondimensional variant's scale invariance.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fsm/features.hpp"
#include "test_support.hpp"

using namespace fsm;
using namespace fsm::test;

namespace {

int column(const std::string& name) {
    const auto& names = feature_names();
    for (int i = 0; i < kFeatureCount; ++i)
        if (names[i] == name) return i;
    FAIL("unknown feature column " + name);
    return -1;
}

}  // namespace

TEST_CASE("Prandtl number reproduces the direct formula value", "[features][fluid]") {
    const FluidProperties props;
    // Find the temperature at which Sutherland viscosity equals 1.8e-5 Pa*s,
    // then Pr there must equal cp*mu/lambda = 1006 * 1.8e-5 / 0.026.
    double lo = 200.0, hi = 400.0;
    REQUIRE(props.dynamic_viscosity(lo) < 1.8e-5);
    REQUIRE(props.dynamic_viscosity(hi) > 1.8e-5);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (props.dynamic_viscosity(mid) < 1.8e-5 ? lo : hi) = mid;
    }
    const double t_star = 0.5 * (lo + hi);
    GroupInputs in;
    in.t = t_star;
    const GroupValues out = dimensionless_groups(in, props);
    CHECK(out.pr == Catch::Approx(1006.0 * 1.8e-5 / 0.026).epsilon(1e-9));
    CHECK(out.pr == Catch::Approx(0.6965).margin(5e-5));
}

TEST_CASE("Prandtl number depends only on the fluid state", "[features][fluid]") {
    const FluidProperties props;
    GroupInputs a, b;
    a.t = b.t = 317.0;
    a.p = b.p = 101000.0;
    a.u = 0.4;
    b.u = 0.0;
    a.wall_adjacent = true;
    a.wall_distance = 0.01;
    a.cell_width_normal = 0.05;
    CHECK(dimensionless_groups(a, props).pr == dimensionless_groups(b, props).pr);
}

TEST_CASE("ideal-gas density and Sutherland viscosity spot values", "[features][fluid]") {
    const FluidProperties props;
    CHECK(props.density(300.0, 101325.0) == Catch::Approx(101325.0 / (287.05 * 300.0)).epsilon(1e-12));
    // Sutherland reference point: mu(273.15 K) = 1.716e-5 Pa*s.
    CHECK(props.dynamic_viscosity(273.15) == Catch::Approx(1.716e-5).epsilon(1e-6));
    // Viscosity of gases increases with temperature.
    CHECK(props.dynamic_viscosity(350.0) > props.dynamic_viscosity(300.0));
}

TEST_CASE("central differences are exact for linear and quadratic fields", "[features][gradients]") {
    const CaseSpec c = basic_case();
    const FieldSnapshot s = analytic_snapshot(
        c, 12, 10, [](double x, double) { return 3.0 * x; }, [](double, double y) { return -2.0 * y; },
        [](double x, double) { return 300.0 + x * x; }, [](double, double y) { return 101325.0 + 5.0 * y; },
        [](double, double) { return 0.02; });
    const GradientComputer gc(s);
    const GradientBlock gu = gc.compute(0);
    const GradientBlock gt = gc.compute(2);
    for (int j = 1; j < 9; ++j) {
        for (int i = 1; i < 11; ++i) {
            const int idx = s.grid.index(i, j);
            CHECK(gu.dx[idx] == Catch::Approx(3.0).margin(1e-12));
            CHECK(gu.dy[idx] == Catch::Approx(0.0).margin(1e-12));
            CHECK(gu.dxx[idx] == Catch::Approx(0.0).margin(1e-11));
            CHECK(gt.dxx[idx] == Catch::Approx(2.0).margin(1e-10));
            CHECK(gt.dxy[idx] == Catch::Approx(0.0).margin(1e-10));
        }
    }
}

TEST_CASE("mixed derivative converges at second order under mesh halving", "[features][gradients]") {
    const CaseSpec c = basic_case();
    auto max_interior_dxy_error = [&](int n) {
        const FieldSnapshot s = analytic_snapshot(
            c, n, n, [](double, double) { return 0.0; }, [](double, double) { return 0.0; },
            [](double x, double y) { return 300.0 + std::sin(x) * std::cos(y); },
            [](double, double) { return 101325.0; }, [](double, double) { return 0.01; });
        const GradientBlock g = GradientComputer(s).compute(2);
        double worst = 0.0;
        for (int j = 2; j < n - 2; ++j) {
            for (int i = 2; i < n - 2; ++i) {
                const double x = s.grid.x_center(i), y = s.grid.y_center(j);
                const double exact = -std::cos(x) * std::sin(y);
                worst = std::max(worst, std::abs(g.dxy[s.grid.index(i, j)] - exact));
            }
        }
        return worst;
    };
    const double e1 = max_interior_dxy_error(16);
    const double e2 = max_interior_dxy_error(32);
    INFO("coarse error " << e1 << ", fine error " << e2 << ", ratio " << e1 / e2);
    CHECK(e1 / e2 > 3.5);  // second order gives ~4x per halving
}

TEST_CASE("gradients reject grids smaller than the stencil", "[features][gradients]") {
    const FieldSnapshot s = random_snapshot(5, 2, 8);
    CHECK_THROWS_WITH(GradientComputer(s), Catch::Matchers::ContainsSubstring("stencil"));
}

TEST_CASE("gamma exponent follows the wall-adjacency rule", "[features][groups]") {
    CHECK(gamma_exponent(true, 0.1, 0.05) == 1.0);
    CHECK(gamma_exponent(true, 0.1, 0.1) == 0.0);
    CHECK(gamma_exponent(false, 0.3, 0.01) == 0.0);
    CHECK(gamma_exponent(true, 0.15, 0.1) == Catch::Approx(0.5));
    for (double w : {0.01, 0.1, 0.5})
        for (double y : {0.005, 0.05, 0.2, 1.0}) {
            const double g = gamma_exponent(true, w, y);
            CHECK(g >= 0.0);
            CHECK(g <= 1.0);
        }
}

TEST_CASE("Reynolds blending hits the stated identities", "[features][groups]") {
    const FluidProperties props;
    GroupInputs in;
    in.u = 0.25;
    in.v = -0.1;
    in.t = 310.0;
    in.dx = in.dy = 0.04;
    const double nu = props.dynamic_viscosity(in.t) / props.density(in.t, in.p);
    const double speed = std::hypot(in.u, in.v);

    SECTION("free cell uses the cell-scale diameter") {
        in.wall_adjacent = false;
        const double dh_f = 2.0 * in.dx * in.dy / (in.dx + in.dy);
        CHECK(dimensionless_groups(in, props).re == speed * dh_f / nu);
    }
    SECTION("fully wall-dominated cell uses twice the wall distance") {
        in.wall_adjacent = true;
        in.wall_distance = 0.01;
        in.cell_width_normal = 0.04;  // w/y - 1 = 3 -> gamma = 1
        CHECK(dimensionless_groups(in, props).re == speed * 2.0 * in.wall_distance / nu);
    }
    SECTION("gamma = 1/2 gives the geometric mean") {
        in.wall_adjacent = true;
        in.wall_distance = 0.04;
        in.cell_width_normal = 0.06;  // w/y - 1 = 0.5
        const double re_w = speed * 2.0 * in.wall_distance / nu;
        const double dh_f = 2.0 * in.dx * in.dy / (in.dx + in.dy);
        const double re_f = speed * dh_f / nu;
        CHECK(dimensionless_groups(in, props).re == Catch::Approx(std::sqrt(re_w * re_f)).epsilon(1e-12));
    }
}

TEST_CASE("group identities hold on random inputs", "[features][groups]") {
    const FluidProperties props;
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int trial = 0; trial < 2000; ++trial) {
        GroupInputs in;
        in.u = 0.5 * (uni(rng) - 0.3);
        in.v = 0.5 * (uni(rng) - 0.5);
        in.t = 285.0 + 60.0 * uni(rng);
        in.p = 101325.0 * (0.95 + 0.1 * uni(rng));
        in.k = 0.05 * uni(rng);
        in.eps = 1e-6 + uni(rng);
        in.wall_adjacent = uni(rng) < 0.5;
        in.wall_distance = 0.002 + 0.3 * uni(rng);
        in.cell_width_normal = 0.002 + 0.3 * uni(rng);
        in.dx = in.dy = 0.01 + 0.09 * uni(rng);
        in.rho_wall_ref = props.density(285.0 + 60.0 * uni(rng), in.p);
        const GroupValues out = dimensionless_groups(in, props);

        CHECK(out.re >= 0.0);
        CHECK(out.pr > 0.0);
        CHECK(out.r >= 0.0);
        if (out.re > 0.0) {
            CHECK(out.ri * out.re * out.re == Catch::Approx(out.gr).epsilon(1e-10));
        } else {
            CHECK(out.ri == 0.0);
            CHECK((out.flags & kFlagRiAtZeroRe) != 0);
        }
        // Blended Re lies between the two endpoint definitions.
        const double nu = props.dynamic_viscosity(in.t) / props.density(in.t, in.p);
        const double speed = std::hypot(in.u, in.v);
        const double re_w = speed * 2.0 * in.wall_distance / nu;
        const double re_f = speed * 2.0 * in.dx * in.dy / (in.dx + in.dy) / nu;
        CHECK(out.re >= std::min(re_w, re_f) * (1.0 - 1e-12));
        CHECK(out.re <= std::max(re_w, re_f) * (1.0 + 1e-12));
    }
}

TEST_CASE("degenerate group inputs take their sentinel values", "[features][groups]") {
    const FluidProperties props;
    GroupInputs in;
    in.t = 320.0;
    SECTION("zero turbulent kinetic energy gives R = 0") {
        in.k = 0.0;
        in.eps = 0.5;
        CHECK(dimensionless_groups(in, props).r == 0.0);
    }
    SECTION("matched wall density gives zero buoyancy groups") {
        in.u = 0.2;
        in.rho_wall_ref = props.density(in.t, in.p);
        const GroupValues out = dimensionless_groups(in, props);
        CHECK(out.gr == 0.0);
        CHECK(out.ri == 0.0);
    }
    SECTION("dissipation below the floor is clamped and flagged") {
        in.k = 0.01;
        in.eps = 1e-12;
        const GroupValues out = dimensionless_groups(in, props, 1e-8);
        const double rho = props.density(in.t, in.p);
        const double mu = props.dynamic_viscosity(in.t);
        CHECK(out.r == Catch::Approx(props.c_mu * rho * 1e-4 / (1e-8 * mu)).epsilon(1e-12));
        CHECK((out.flags & kFlagEpsFloored) != 0);
    }
}

TEST_CASE("extraction yields one row per cell in declared column order", "[features][extract]") {
    const FieldSnapshot s = random_snapshot(21, 30, 30);
    const FeatureMatrix m = extract_features(s, FeatureVariant::dimensional);
    CHECK(m.rows() == 900);
    CHECK(m.names.size() == 30);
    CHECK(m.names == feature_names());
    m.validate();

    const FeatureMatrix again = extract_features(s, FeatureVariant::dimensional);
    CHECK(m.values == again.values);  // bitwise deterministic
}

TEST_CASE("nondimensionalization divides by the global reference scales", "[features][nondim]") {
    CaseSpec c = basic_case();
    c.u_inj = 0.3;
    c.t_inj = 321.15;
    // u = 0.3x gives du/dx = 0.3 = u_inj/width; T rises 30 K per meter of y.
    const FieldSnapshot s = analytic_snapshot(
        c, 10, 10, [](double x, double) { return 0.3 * x; }, [](double, double) { return 0.0; },
        [](double, double y) { return 300.0 + 30.0 * y; }, [](double, double) { return 101325.0; },
        [](double, double) { return 0.01; });
    const FeatureMatrix dim = extract_features(s, FeatureVariant::dimensional);
    const FeatureMatrix non = nondimensionalize(dim, c);
    CHECK(non.variant == FeatureVariant::nondimensional);

    const int cu = column("du_dx"), ct = column("dT_dy");
    const int mid = s.grid.index(5, 5);
    CHECK(dim.at(mid, cu) == Catch::Approx(0.3).margin(1e-12));
    CHECK(non.at(mid, cu) == Catch::Approx(1.0).margin(1e-10));
    CHECK(dim.at(mid, ct) == Catch::Approx(30.0).margin(1e-9));
    CHECK(non.at(mid, ct) == Catch::Approx(30.0 / 321.15).epsilon(1e-9));
    CHECK(non.at(mid, ct) == Catch::Approx(0.0934).margin(5e-5));

    // The five groups pass through unchanged.
    for (const char* g : {"R", "Re", "Gr", "Ri", "Pr"})
        CHECK(non.at(mid, column(g)) == dim.at(mid, column(g)));

    CHECK_THROWS_WITH(nondimensionalize(non, c), Catch::Matchers::ContainsSubstring("nondimensional"));
}

TEST_CASE("direct nondimensional extraction equals the two-step path", "[features][nondim]") {
    const FieldSnapshot s = random_snapshot(17, 12, 12);
    const FeatureMatrix direct = extract_features(s, FeatureVariant::nondimensional);
    const FeatureMatrix two_step = nondimensionalize(extract_features(s, FeatureVariant::dimensional), s.case_spec);
    REQUIRE(direct.rows() == two_step.rows());
    for (int r = 0; r < direct.rows(); ++r)
        for (int c = 0; c < kFeatureCount; ++c)
            CHECK(direct.at(r, c) == Catch::Approx(two_step.at(r, c)).margin(1e-13));
}

TEST_CASE("nondimensional gradients are invariant under geometric rescaling", "[features][nondim]") {
    auto build = [](double scale) {
        CaseSpec c = basic_case(scale, scale);
        c.u_inj = 0.3;
        // Same normalized field shape at every scale.
        return analytic_snapshot(
            c, 14, 14, [&](double x, double y) { return 0.3 * std::sin(x / scale) * std::cos(y / scale); },
            [&](double x, double y) { return -0.1 * std::cos(x / scale) * std::sin(y / scale); },
            [&](double x, double y) { return 300.0 + 20.0 * (x / scale) * (y / scale); },
            [&](double x, double) { return 101325.0 + 10.0 * (x / scale); },
            [&](double, double y) { return 0.01 * (1.0 + y / scale); });
    };
    const FeatureMatrix a = extract_features(build(1.0), FeatureVariant::nondimensional);
    const FeatureMatrix b = extract_features(build(2.0), FeatureVariant::nondimensional);
    REQUIRE(a.rows() == b.rows());
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < 25; ++c) {  // the 25 gradient columns
            INFO("row " << r << " column " << a.names[c]);
            CHECK(a.at(r, c) == Catch::Approx(b.at(r, c)).margin(1e-10).epsilon(1e-9));
        }
}

TEST_CASE("feature matrix file round-trips and rejects corruption", "[features][io]") {
    const FeatureMatrix m = extract_features(random_snapshot(31, 8, 8), FeatureVariant::dimensional);
    const auto dir = scratch_dir("features-io");
    const std::string path = (dir / "features.txt").string();
    save_feature_matrix(path, m);
    const FeatureMatrix r = load_feature_matrix(path);
    CHECK(r.names == m.names);
    CHECK(r.values == m.values);
    CHECK(r.variant == m.variant);
    CHECK(r.case_id == m.case_id);

    std::string text = read_file(path);
    text.resize(text.size() / 2);
    write_file_atomic(path, text);
    CHECK_THROWS(load_feature_matrix(path));
}
