#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "artifit/rng.hpp"
#include "artifit/shapes.hpp"
#include "artifit/voxel.hpp"

using namespace artifit;

namespace {

VoxelGrid random_grid(const GridSpec& spec, std::uint64_t seed) {
    VoxelGrid g(spec);
    Rng rng(seed);
    for (auto& v : g.values) v = static_cast<float>(rng.uniform());
    return g;
}

} // namespace

TEST_CASE("grid spec geometry and validation") {
    const GridSpec spec = GridSpec::centered_cube(Eigen::Vector3d::Zero(), 1.0, 32);
    REQUIRE(spec.resolution == Eigen::Vector3i(32, 32, 32));
    CHECK(spec.cell_size().x() == Catch::Approx(1.0 / 32).margin(1e-15));
    CHECK(spec.cell_center(0, 0, 0).x() == Catch::Approx(-0.5 + 0.5 / 32).margin(1e-15));
    CHECK(spec.cell_center(31, 0, 0).x() == Catch::Approx(0.5 - 0.5 / 32).margin(1e-15));
    CHECK(spec.cell_count() == 32u * 32u * 32u);

    GridSpec bad = spec;
    bad.resolution.y() = 0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = spec;
    bad.extent.z() = -1.0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);

    VoxelGrid g(spec);
    CHECK(g.values.size() == spec.cell_count());
    g.set(3, 5, 7, 0.25f);
    CHECK(g.at(3, 5, 7) == 0.25f);
    CHECK(g.values[(3u * 32 + 5) * 32 + 7] == 0.25f); // x-major, z fastest
}

TEST_CASE("point voxelization bins points and counts strays") {
    const GridSpec spec = GridSpec::centered_cube(Eigen::Vector3d::Zero(), 1.0, 32);
    PointSet pts;
    pts.points = {Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(0.4, -0.4, 0.2),
                  Eigen::Vector3d(2, 0, 0)}; // last one is outside
    const VoxelizeResult r = voxelize(pts, spec, VoxelizeMode::surface);
    CHECK(r.dropped == 1);
    CHECK(r.grid.at(16, 16, 16) == 1.0f);
    const int ix = static_cast<int>(std::floor((0.4 + 0.5) * 32));
    const int iy = static_cast<int>(std::floor((-0.4 + 0.5) * 32));
    const int iz = static_cast<int>(std::floor((0.2 + 0.5) * 32));
    CHECK(r.grid.at(ix, iy, iz) == 1.0f);

    std::size_t occupied = 0;
    for (float v : r.grid.values) occupied += v > 0.0f;
    CHECK(occupied == 2);

    CHECK_THROWS_AS(voxelize(pts, spec, VoxelizeMode::solid), ParameterError);
}

TEST_CASE("surface voxelization marks walls but not interiors") {
    const GridSpec spec = GridSpec::centered_cube(Eigen::Vector3d::Zero(), 1.0, 32);
    const TriMesh box = make_box(Eigen::Vector3d::Zero(), Eigen::Vector3d(0.6, 0.6, 0.6));
    const VoxelGrid g = voxelize(box, spec, VoxelizeMode::surface).grid;

    CHECK(g.at(16, 16, 16) == 0.0f); // deep interior is empty in surface mode
    const int wall = static_cast<int>(std::floor((0.3 + 0.5) * 32));
    CHECK(g.at(wall, 16, 16) == 1.0f);
    CHECK(g.at(16, wall, 16) == 1.0f);
    CHECK(g.at(31, 31, 31) == 0.0f);
}

TEST_CASE("solid voxelization fills watertight interiors") {
    const GridSpec spec = GridSpec::centered_cube(Eigen::Vector3d::Zero(), 1.0, 32);
    const TriMesh box = make_box(Eigen::Vector3d::Zero(), Eigen::Vector3d(0.6, 0.6, 0.6));
    const VoxelGrid g = voxelize(box, spec, VoxelizeMode::solid).grid;

    CHECK(g.at(16, 16, 16) == 1.0f);
    CHECK(g.at(1, 1, 1) == 0.0f);

    std::size_t occupied = 0;
    for (float v : g.values) occupied += v > 0.0f;
    const double cell_volume = std::pow(1.0 / 32, 3);
    CHECK(std::abs(occupied * cell_volume - 0.216) < 0.05);

    TriMesh open = box;
    open.triangles.pop_back();
    CHECK_THROWS_AS(voxelize(open, spec, VoxelizeMode::solid), TopologyError);
}

TEST_CASE("solid sphere stays inside the discretization envelope") {
    const GridSpec spec = GridSpec::centered_cube(Eigen::Vector3d::Zero(), 1.0, 64);
    const double r = 0.35;
    const TriMesh sphere = make_icosphere(r, Eigen::Vector3d::Zero(), 3);
    const VoxelGrid g = voxelize(sphere, spec, VoxelizeMode::solid).grid;

    // Exact membership bounds: cells centered inside the ball must be marked,
    // cells whose whole cube lies outside must not. (The icosphere sits just
    // inside its circumsphere, so give the inner bound that facet margin.)
    const double half_diag = 0.5 * spec.cell_size().norm();
    const double facet_sag = r * 0.01; // subdiv-3 facets dip below the sphere
    std::size_t occupied = 0;
    for (int ix = 0; ix < 64; ++ix)
        for (int iy = 0; iy < 64; ++iy)
            for (int iz = 0; iz < 64; ++iz) {
                const double d = spec.cell_center(ix, iy, iz).norm();
                const bool on = g.at(ix, iy, iz) > 0.0f;
                occupied += on;
                if (d < r - facet_sag - half_diag) REQUIRE(on);
                if (d > r + half_diag) REQUIRE_FALSE(on);
            }

    // Volume bracketed by the balls eroded/dilated by one cell half-diagonal.
    const double volume = occupied * std::pow(1.0 / 64, 3);
    auto ball = [](double rad) {
        return 4.0 / 3.0 * std::numbers::pi * std::pow(rad, 3);
    };
    CHECK(volume > ball(r - facet_sag - half_diag));
    CHECK(volume < ball(r + half_diag));
}

TEST_CASE("max-pool downsampling matches a brute-force oracle") {
    const GridSpec spec = GridSpec::centered_cube(Eigen::Vector3d::Zero(), 1.0, 16);
    const VoxelGrid g = random_grid(spec, 5);
    const VoxelGrid d = downsample_max(g, 4);
    REQUIRE(d.spec.resolution == Eigen::Vector3i(4, 4, 4));
    CHECK(d.spec.extent == g.spec.extent);

    for (int ix = 0; ix < 4; ++ix)
        for (int iy = 0; iy < 4; ++iy)
            for (int iz = 0; iz < 4; ++iz) {
                float m = 0.0f;
                for (int a = 0; a < 4; ++a)
                    for (int b = 0; b < 4; ++b)
                        for (int c = 0; c < 4; ++c)
                            m = std::max(m, g.at(4 * ix + a, 4 * iy + b, 4 * iz + c));
                CHECK(d.at(ix, iy, iz) == m);
            }

    CHECK_THROWS_AS(downsample_max(g, 3), ShapeError);
    CHECK_THROWS_AS(downsample_max(g, 0), ParameterError);
}

TEST_CASE("multi-resolution pyramid is co-registered coarse to fine") {
    const GridSpec base = GridSpec::centered_cube(Eigen::Vector3d::Zero(), 1.0, 8);
    PointSet pts;
    pts.points = {Eigen::Vector3d(0.21, -0.13, 0.34)};
    const MultiResVoxel mr = multires_voxelize(pts, base);

    REQUIRE(mr.coarsest().spec.resolution == Eigen::Vector3i(8, 8, 8));
    REQUIRE(mr.finest().spec.resolution == Eigen::Vector3i(64, 64, 64));
    for (int level = 0; level < 4; ++level) {
        const VoxelGrid& g = mr.levels[level];
        const int n = 8 << level;
        REQUIRE(g.spec.resolution == Eigen::Vector3i(n, n, n));
        CHECK(g.spec.extent == base.extent);
        const int ix = static_cast<int>(std::floor((0.21 + 0.5) * n));
        const int iy = static_cast<int>(std::floor((-0.13 + 0.5) * n));
        const int iz = static_cast<int>(std::floor((0.34 + 0.5) * n));
        CHECK(g.at(ix, iy, iz) == 1.0f);

        std::size_t occupied = 0;
        for (float v : g.values) occupied += v > 0.0f;
        CHECK(occupied == 1);
    }
}

TEST_CASE("grid overlap and distance measures") {
    const GridSpec spec{Eigen::Vector3i(3, 1, 1), Eigen::Vector3d::Zero(),
                        Eigen::Vector3d(3, 1, 1)};
    VoxelGrid a(spec), b(spec);
    a.values = {0.5f, 0.0f, 1.0f};
    b.values = {0.0f, 0.0f, 0.0f};

    SECTION("l2 is the root of the summed squared difference") {
        CHECK(voxel_l2(a, b) == Catch::Approx(std::sqrt(1.25)).margin(1e-12));
        CHECK(voxel_l2(a, a) == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("l1 is the mean absolute difference") {
        CHECK(voxel_l1(a, b) == Catch::Approx(1.5 / 3.0).margin(1e-12));
    }
    SECTION("iou binarizes at one half") {
        VoxelGrid c(spec);
        c.values = {1.0f, 1.0f, 0.0f};
        // a binarizes to {1, 0, 1}: intersection 1 cell, union 3 cells.
        CHECK(voxel_iou(a, c) == Catch::Approx(1.0 / 3.0).margin(1e-12));
        CHECK(voxel_iou(b, b) == Catch::Approx(1.0).margin(1e-15)); // both empty
        CHECK(voxel_iou(a, a) == Catch::Approx(1.0).margin(1e-15));

        VoxelGrid other(GridSpec{Eigen::Vector3i(2, 1, 1), Eigen::Vector3d::Zero(),
                                 Eigen::Vector3d(2, 1, 1)});
        CHECK_THROWS_AS(voxel_iou(a, other), ShapeError);
    }
}

TEST_CASE("gaussian smoothing preserves interior mass and symmetry") {
    const GridSpec spec = GridSpec::centered_cube(Eigen::Vector3d::Zero(), 1.0, 17);
    VoxelGrid g(spec);
    g.set(8, 8, 8, 1.0f);
    const VoxelGrid s = smooth_grid(g, 1.0);

    double mass = 0.0;
    for (float v : s.values) mass += v;
    CHECK(mass == Catch::Approx(1.0).epsilon(0.01));

    CHECK(s.at(8, 8, 8) > s.at(9, 8, 8));
    CHECK(s.at(9, 8, 8) == Catch::Approx(s.at(7, 8, 8)).margin(1e-7));
    CHECK(s.at(9, 8, 8) == Catch::Approx(s.at(8, 9, 8)).margin(1e-7));
    CHECK(s.at(9, 8, 8) == Catch::Approx(s.at(8, 8, 7)).margin(1e-7));

    // Zero smoothing is the identity.
    const VoxelGrid same = smooth_grid(g, 0.0);
    CHECK(same.values == g.values);
}

TEST_CASE("trilinear sampling interpolates cell centers exactly") {
    const GridSpec spec{Eigen::Vector3i(2, 1, 1), Eigen::Vector3d::Zero(),
                        Eigen::Vector3d(2, 1, 1)};
    VoxelGrid g(spec);
    g.values = {0.0f, 1.0f};

    // Centers at x = 0.5 and x = 1.5.
    CHECK(sample_trilinear(g, Eigen::Vector3d(0.5, 0.5, 0.5)) ==
          Catch::Approx(0.0).margin(1e-15));
    CHECK(sample_trilinear(g, Eigen::Vector3d(1.5, 0.5, 0.5)) ==
          Catch::Approx(1.0).margin(1e-15));
    Eigen::Vector3d grad;
    CHECK(sample_trilinear(g, Eigen::Vector3d(1.0, 0.5, 0.5), &grad) ==
          Catch::Approx(0.5).margin(1e-15));
    // x is mid-cell here, so its derivative is two-sided and exact; the other
    // axes sit on lattice planes where only one-sided derivatives exist, so
    // they are checked by the finite-difference sweep below instead.
    CHECK(grad.x() == Catch::Approx(1.0).margin(1e-12)); // rise 1 over 1 meter

    // Far outside: zero value, zero gradient.
    CHECK(sample_trilinear(g, Eigen::Vector3d(40, 0, 0), &grad) == 0.0);
    CHECK(grad.norm() == 0.0);
}

TEST_CASE("trilinear gradient matches finite differences off the lattice") {
    const GridSpec spec = GridSpec::centered_cube(Eigen::Vector3d(0.2, -0.1, 0.0), 1.0, 12);
    const VoxelGrid g = random_grid(spec, 17);
    Rng rng(18);
    const double cell = spec.cell_size().x();
    const double h = 1e-7;

    int tested = 0;
    while (tested < 50) {
        Eigen::Vector3d y(rng.uniform(-0.3, 0.3) + 0.2, rng.uniform(-0.3, 0.3) - 0.1,
                          rng.uniform(-0.3, 0.3));
        // Keep away from interpolation lattice planes so the one-sided kinks
        // of the piecewise-linear field cannot contaminate the differences.
        const Eigen::Vector3d u =
            (y - spec.origin) / cell - Eigen::Vector3d::Constant(0.5);
        bool safe = true;
        for (int d = 0; d < 3; ++d)
            safe = safe && std::abs(u[d] - std::round(u[d])) > 0.05;
        if (!safe) continue;
        ++tested;

        Eigen::Vector3d grad;
        sample_trilinear(g, y, &grad);
        for (int d = 0; d < 3; ++d) {
            Eigen::Vector3d hi = y, lo = y;
            hi[d] += h;
            lo[d] -= h;
            const double fd = (sample_trilinear(g, hi) - sample_trilinear(g, lo)) / (2 * h);
            CHECK(grad[d] == Catch::Approx(fd).margin(1e-6));
        }
    }
}
