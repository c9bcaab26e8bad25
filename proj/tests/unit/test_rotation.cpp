#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "artifit/rng.hpp"
#include "artifit/rotation.hpp"
#include "support/test_util.hpp"

using namespace artifit;
using testutil::max_abs_diff;

TEST_CASE("identity seeds decode to the identity matrix") {
    const Eigen::Matrix3d R = rot6d_to_matrix(Rot6D::identity());
    REQUIRE(max_abs_diff(R, Eigen::Matrix3d::Identity()) < 1e-15);
}

TEST_CASE("decoding is invariant to seed scaling") {
    Rng rng(101);
    for (int i = 0; i < 20; ++i) {
        Rot6D r{rng.normal3(), rng.normal3()};
        const Eigen::Matrix3d a = rot6d_to_matrix(r);
        Rot6D scaled{5.0 * r.c1, 0.25 * r.c2};
        const Eigen::Matrix3d b = rot6d_to_matrix(scaled);
        REQUIRE(max_abs_diff(a, b) < 1e-12);
    }
}

TEST_CASE("random seeds decode to proper rotations") {
    Rng rng(7);
    for (int i = 0; i < 100; ++i) {
        Rot6D r{rng.normal3(), rng.normal3()};
        const Eigen::Matrix3d R = rot6d_to_matrix(r);
        REQUIRE(max_abs_diff(R.transpose() * R, Eigen::Matrix3d::Identity()) < 1e-9);
        REQUIRE(std::abs(R.determinant() - 1.0) < 1e-9);
        // The first column must align with the normalized first seed.
        REQUIRE((R.col(0) - r.c1.normalized()).norm() < 1e-12);
    }
}

TEST_CASE("matrix to seeds and back is the identity map on rotations") {
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        const Eigen::Matrix3d R = testutil::random_rotation(rng);
        const Eigen::Matrix3d back = rot6d_to_matrix(matrix_to_rot6d(R));
        REQUIRE(max_abs_diff(R, back) < 1e-9);
    }
}

TEST_CASE("a quarter turn about z decodes exactly") {
    const Eigen::Matrix3d R = testutil::rodrigues({0, 0, 1}, M_PI / 2);
    const Rot6D r = matrix_to_rot6d(R);
    const Eigen::Matrix3d back = rot6d_to_matrix(r);
    Eigen::Matrix3d expected;
    expected << 0, -1, 0,
                1, 0, 0,
                0, 0, 1;
    REQUIRE(max_abs_diff(back, expected) < 1e-12);
}

TEST_CASE("degenerate seeds are rejected") {
    REQUIRE_THROWS_AS(rot6d_to_matrix(Rot6D{{0, 0, 0}, {0, 1, 0}}), InvalidRotationError);
    REQUIRE_THROWS_AS(rot6d_to_matrix(Rot6D{{1, 0, 0}, {2, 0, 0}}), InvalidRotationError);
    REQUIRE_THROWS_AS(rot6d_to_matrix(Rot6D{{1, 0, 0}, {0, 0, 0}}), InvalidRotationError);
    REQUIRE_THROWS_AS(rot6d_to_matrix(Rot6D{{1, 1e-13, 0}, {1, 0, 0}}), InvalidRotationError);
}

TEST_CASE("non-rotation matrices are rejected by the encoder") {
    Eigen::Matrix3d notOrtho = Eigen::Matrix3d::Identity();
    notOrtho(0, 0) = 1.1;
    REQUIRE_THROWS_AS(matrix_to_rot6d(notOrtho), InvalidRotationError);

    Eigen::Matrix3d reflection = Eigen::Matrix3d::Identity();
    reflection(2, 2) = -1.0;
    REQUIRE_THROWS_AS(matrix_to_rot6d(reflection), InvalidRotationError);
}

TEST_CASE("decode jacobian matches central finite differences") {
    Rng rng(23);
    const double h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
        Rot6D r{rng.normal3(), rng.normal3()};
        std::array<Eigen::Matrix3d, 6> jac;
        rot6d_to_matrix(r, &jac);
        for (int k = 0; k < 6; ++k) {
            Rot6D plus = r, minus = r;
            double& vp = k < 3 ? plus.c1[k] : plus.c2[k - 3];
            double& vm = k < 3 ? minus.c1[k] : minus.c2[k - 3];
            vp += h;
            vm -= h;
            const Eigen::Matrix3d fd =
                (rot6d_to_matrix(plus) - rot6d_to_matrix(minus)) / (2 * h);
            worst = std::max(worst, max_abs_diff(fd, jac[k]));
        }
    }
    REQUIRE(worst < 1e-7);
}

TEST_CASE("geodesic angle agrees with a quaternion oracle") {
    REQUIRE(geodesic_angle(Eigen::Matrix3d::Identity(),
                           testutil::rodrigues({0, 0, 1}, M_PI / 2)) ==
            Catch::Approx(M_PI / 2).margin(1e-12));

    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
        const Eigen::Matrix3d a = testutil::random_rotation(rng);
        const Eigen::Matrix3d b = testutil::random_rotation(rng);
        REQUIRE(geodesic_angle(a, b) ==
                Catch::Approx(testutil::quat_angle(a, b)).margin(1e-8));
        REQUIRE(geodesic_angle(a, b) == Catch::Approx(geodesic_angle(b, a)).margin(1e-12));
    }
}

TEST_CASE("so3 exp and log are mutually inverse") {
    Rng rng(37);
    for (int i = 0; i < 50; ++i) {
        const Eigen::Vector3d w = rng.uniform(0.0, 3.0) * rng.unit_vector();
        const Eigen::Matrix3d R = exp_so3(w);
        REQUIRE(max_abs_diff(R, testutil::rodrigues(w.normalized(), w.norm())) < 1e-12);
        REQUIRE((log_so3(R) - w).norm() < 1e-9);
    }
    REQUIRE(log_so3(Eigen::Matrix3d::Identity()).norm() < 1e-12);
}
