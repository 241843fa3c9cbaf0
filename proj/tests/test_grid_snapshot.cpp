/// Grid geometry, snapshot round-trips and fine-to-coarse projection,
/// checked against directly computed cell centers and block means.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "fsm/snapshot.hpp"
#include "test_support.hpp"

using namespace fsm;
using namespace fsm::test;

TEST_CASE("grid geometry matches direct arithmetic", "[grid]") {
    const StructuredGrid2D g(25, 20, 1.0, 0.8);
    CHECK(g.nx() == 25);
    CHECK(g.ny() == 20);
    CHECK(g.cell_count() == 500);
    CHECK(g.dx() == Catch::Approx(0.04).epsilon(1e-14));
    CHECK(g.dy() == Catch::Approx(0.04).epsilon(1e-14));
    CHECK(g.x_center(0) == Catch::Approx(0.02));
    CHECK(g.x_center(24) == Catch::Approx(1.0 - 0.02));
    CHECK(g.y_center(19) == Catch::Approx(0.8 - 0.02));
    CHECK(g.index(3, 2) == 2 * 25 + 3);
}

TEST_CASE("wall distance is the minimum distance to any solid boundary", "[grid]") {
    const CaseSpec c = basic_case();
    const StructuredGrid2D g = StructuredGrid2D::for_case(c, 10, 10);
    // Cell (5, 5) is interior: nearest wall is 0.45 m away on either axis.
    CHECK(g.wall_distance(g.index(5, 5)) == Catch::Approx(0.45).margin(1e-12));
    // Cell (5, 0) sits 0.05 m above the bottom wall.
    CHECK(g.wall_distance(g.index(5, 0)) == Catch::Approx(0.05).margin(1e-12));
    // Cell (0, 0) is beside the inlet opening (not a wall), so the nearest
    // solid surface is the bottom wall at 0.05 m, not the left face.
    CHECK(g.wall_distance(g.index(0, 0)) == Catch::Approx(0.05).margin(1e-12));
    // Cell (0, 9) is above the opening: the left face is solid there.
    CHECK(g.wall_distance(g.index(0, 9)) == Catch::Approx(0.05).margin(1e-12));
}

TEST_CASE("snapshot save/load round-trips every field bit-exactly", "[snapshot]") {
    const FieldSnapshot s = random_snapshot(7);
    const auto dir = scratch_dir("snapshot-roundtrip");
    const std::string path = (dir / "snap.txt").string();
    save_snapshot(path, s);
    const FieldSnapshot r = load_snapshot(path);

    CHECK(r.grid.nx() == s.grid.nx());
    CHECK(r.grid.ny() == s.grid.ny());
    CHECK(r.case_spec.id == s.case_spec.id);
    CHECK(r.case_spec.t_inj == s.case_spec.t_inj);
    CHECK(r.fidelity == s.fidelity);
    REQUIRE(r.u.size() == s.u.size());
    for (std::size_t i = 0; i < s.u.size(); ++i) {
        CHECK(r.u[i] == s.u[i]);
        CHECK(r.v[i] == s.v[i]);
        CHECK(r.t[i] == s.t[i]);
        CHECK(r.p[i] == s.p[i]);
        CHECK(r.k[i] == s.k[i]);
        CHECK(r.eps[i] == s.eps[i]);
    }
}

TEST_CASE("snapshot validation rejects malformed fields", "[snapshot]") {
    FieldSnapshot s = random_snapshot(3);
    SECTION("short field array") {
        s.v.pop_back();
        CHECK_THROWS_WITH(s.validate(), Catch::Matchers::ContainsSubstring("'v'"));
    }
    SECTION("non-finite value") {
        s.t[5] = std::nan("");
        CHECK_THROWS_WITH(s.validate(), Catch::Matchers::ContainsSubstring("non-finite"));
    }
    SECTION("non-positive temperature") {
        s.t[0] = 0.0;
        CHECK_THROWS_WITH(s.validate(), Catch::Matchers::ContainsSubstring("temperature"));
    }
    SECTION("negative turbulent kinetic energy") {
        s.k[2] = -1e-9;
        CHECK_THROWS(s.validate());
    }
}

TEST_CASE("truncated snapshot file is rejected with the row position", "[snapshot]") {
    const FieldSnapshot s = random_snapshot(11, 8, 8);
    const auto dir = scratch_dir("snapshot-truncated");
    const std::string path = (dir / "snap.txt").string();
    save_snapshot(path, s);
    std::string text = read_file(path);
    text.resize(text.size() * 2 / 3);
    write_file_atomic(path, text);
    CHECK_THROWS(load_snapshot(path));
}

TEST_CASE("projection onto a nested coarse grid takes exact block means", "[snapshot][projection]") {
    const CaseSpec c = basic_case();
    // Fine field chosen so each 3x3 block mean is computable in closed form:
    // f(x, y) = x has block mean equal to the coarse cell's x center.
    const FieldSnapshot fine = analytic_snapshot(
        c, 12, 12, [](double x, double) { return x; }, [](double, double y) { return y; },
        [](double x, double y) { return 300.0 + x + 2.0 * y; }, [](double, double) { return 101325.0; },
        [](double, double) { return 0.01; });
    const StructuredGrid2D coarse = StructuredGrid2D::for_case(c, 4, 4);
    const FieldSnapshot proj = project_fine_to_coarse(fine, coarse);
    REQUIRE(proj.grid.cell_count() == 16);
    for (int j = 0; j < 4; ++j) {
        for (int i = 0; i < 4; ++i) {
            const int idx = proj.grid.index(i, j);
            CHECK(proj.u[idx] == Catch::Approx(coarse.x_center(i)).margin(1e-12));
            CHECK(proj.v[idx] == Catch::Approx(coarse.y_center(j)).margin(1e-12));
            CHECK(proj.t[idx] ==
                  Catch::Approx(300.0 + coarse.x_center(i) + 2.0 * coarse.y_center(j)).margin(1e-12));
        }
    }
    CHECK(proj.fidelity == fine.fidelity);
}

TEST_CASE("projection requires a nested coarse grid", "[snapshot][projection]") {
    const FieldSnapshot fine = random_snapshot(1, 12, 12);
    const StructuredGrid2D coarse(5, 4, 1.0, 1.0);
    CHECK_THROWS_WITH(project_fine_to_coarse(fine, coarse), Catch::Matchers::ContainsSubstring("nest"));
}
