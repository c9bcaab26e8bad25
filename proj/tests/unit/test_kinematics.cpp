#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cstring>

#include "artifit/kinematics.hpp"
#include "artifit/rng.hpp"
#include "support/test_util.hpp"

using namespace artifit;
using testutil::homog;
using testutil::max_abs_diff;
using testutil::rodrigues;

namespace {

Eigen::Isometry3d make_iso(const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
    Eigen::Isometry3d iso = Eigen::Isometry3d::Identity();
    iso.linear() = R;
    iso.translation() = t;
    return iso;
}

KinematicModel two_part_revolute() {
    KinematicModel m;
    m.parts = {{"base", ""}, {"arm", ""}};
    Joint j;
    j.kind = JointKind::revolute;
    j.axis = Eigen::Vector3d::UnitZ();
    j.origin = make_iso(Eigen::Matrix3d::Identity(), {1, 0, 0});
    m.joints = {{j, 0, 1, "swivel"}};
    return m;
}

// Random 3-part serial chain with mixed joint kinds; no limits so states roam.
KinematicModel random_chain(Rng& rng, JointState& state) {
    KinematicModel m;
    m.parts = {{"p0", ""}, {"p1", ""}, {"p2", ""}};
    state.clear();
    for (int j = 0; j < 2; ++j) {
        Joint joint;
        const int kind = static_cast<int>(rng.uniform_int(0, 2));
        joint.kind = static_cast<JointKind>(kind);
        joint.axis = rng.unit_vector();
        joint.origin = make_iso(testutil::random_rotation(rng),
                                rng.normal3() * 0.5);
        m.joints.push_back({joint, j, j + 1, "j" + std::to_string(j)});
        if (joint.kind == JointKind::revolute) {
            state.push_back(rng.uniform(-3.0, 3.0));
        } else if (joint.kind == JointKind::prismatic) {
            state.push_back(rng.uniform(-1.0, 1.0));
        } else {
            state.push_back(rng.uniform(-3.0, 3.0));
            state.push_back(rng.uniform(-1.0, 1.0));
        }
    }
    return m;
}

// Oracle: composes raw homogeneous matrices, with joint motion built from the
// longhand Rodrigues formula. Mirrors none of the library internals.
Eigen::Matrix4d chain_oracle(const KinematicModel& m, const Eigen::Matrix4d& root,
                             const JointState& state, int part) {
    Eigen::Matrix4d w = root;
    int off = 0;
    for (std::size_t j = 0; j < m.joints.size(); ++j) {
        const Joint& joint = m.joints[j].joint;
        double angle = 0.0, shift = 0.0;
        if (joint.kind == JointKind::revolute) angle = state[off];
        if (joint.kind == JointKind::prismatic) shift = state[off];
        if (joint.kind == JointKind::revolute_prismatic) {
            angle = state[off];
            shift = state[off + 1];
        }
        off += joint.kind == JointKind::revolute_prismatic ? 2 : 1;
        if (m.joints[j].child > part) break;
        const Eigen::Matrix4d origin =
            homog(m.joints[j].joint.origin.linear(), m.joints[j].joint.origin.translation());
        const Eigen::Matrix4d motion =
            homog(joint.kind == JointKind::prismatic ? Eigen::Matrix3d::Identity()
                                                     : rodrigues(joint.axis, angle),
                  joint.kind == JointKind::revolute ? Eigen::Vector3d::Zero()
                                                    : Eigen::Vector3d(joint.axis * shift));
        w = w * origin * motion;
    }
    return w;
}

} // namespace

TEST_CASE("revolute quarter turn places and orients the child") {
    const KinematicModel m = two_part_revolute();
    const JointState state{M_PI / 2};
    const auto poses = forward_kinematics(m, PartPose{}, state);
    REQUIRE((poses[1].translation - Eigen::Vector3d(1, 0, 0)).norm() < 1e-12);
    const Eigen::Matrix3d R = rot6d_to_matrix(poses[1].rotation);
    // The child x-axis must map onto +y.
    REQUIRE((R * Eigen::Vector3d::UnitX() - Eigen::Vector3d::UnitY()).norm() < 1e-12);
}

TEST_CASE("prismatic joint slides along its axis") {
    KinematicModel m;
    m.parts = {{"a", ""}, {"b", ""}};
    Joint j;
    j.kind = JointKind::prismatic;
    j.axis = Eigen::Vector3d::UnitX();
    j.origin = make_iso(Eigen::Matrix3d::Identity(), {0, 0.5, 0});
    m.joints = {{j, 0, 1, "slide"}};
    const auto poses = forward_kinematics(m, PartPose{}, JointState{0.5});
    REQUIRE((poses[1].translation - Eigen::Vector3d(0.5, 0.5, 0)).norm() < 1e-12);
    REQUIRE(max_abs_diff(rot6d_to_matrix(poses[1].rotation),
                         Eigen::Matrix3d::Identity()) < 1e-12);
}

TEST_CASE("revolute_prismatic rotates about and slides along one axis") {
    KinematicModel m;
    m.parts = {{"a", ""}, {"b", ""}};
    Joint j;
    j.kind = JointKind::revolute_prismatic;
    j.axis = Eigen::Vector3d::UnitZ();
    m.joints = {{j, 0, 1, "screw"}};
    const auto poses = forward_kinematics(m, PartPose{}, JointState{M_PI / 2, 0.3});
    REQUIRE((poses[1].translation - Eigen::Vector3d(0, 0, 0.3)).norm() < 1e-12);
    REQUIRE(max_abs_diff(rot6d_to_matrix(poses[1].rotation), rodrigues({0, 0, 1}, M_PI / 2)) <
            1e-12);
}

TEST_CASE("zero state and identity root reproduce composed origins") {
    Rng rng(43);
    for (int trial = 0; trial < 10; ++trial) {
        JointState ignored;
        const KinematicModel m = random_chain(rng, ignored);
        const JointState zero(static_cast<std::size_t>(m.state_size()), 0.0);
        const auto world = fk_transforms(m, Eigen::Isometry3d::Identity(), zero);
        Eigen::Isometry3d expect = Eigen::Isometry3d::Identity();
        REQUIRE(max_abs_diff(world[0].matrix(), expect.matrix()) < 1e-15);
        expect = expect * m.joints[0].joint.origin;
        REQUIRE(max_abs_diff(world[1].matrix(), expect.matrix()) < 1e-12);
        expect = expect * m.joints[1].joint.origin;
        REQUIRE(max_abs_diff(world[2].matrix(), expect.matrix()) < 1e-12);
    }
}

TEST_CASE("chains match a raw homogeneous-matrix oracle") {
    Rng rng(47);
    for (int trial = 0; trial < 100; ++trial) {
        JointState state;
        const KinematicModel m = random_chain(rng, state);
        Eigen::Isometry3d root = make_iso(testutil::random_rotation(rng), rng.normal3());
        const auto world = fk_transforms(m, root, state);
        for (int part = 0; part < 3; ++part) {
            const Eigen::Matrix4d expect = chain_oracle(m, root.matrix(), state, part);
            REQUIRE(max_abs_diff(world[part].matrix(), expect) < 1e-9);
        }
    }
}

TEST_CASE("pre-multiplying the root pose is equivariant") {
    Rng rng(53);
    JointState state;
    const KinematicModel m = random_chain(rng, state);
    const Eigen::Isometry3d root = make_iso(testutil::random_rotation(rng), rng.normal3());
    const Eigen::Isometry3d g = make_iso(testutil::random_rotation(rng), rng.normal3());
    const auto base = fk_transforms(m, root, state);
    const auto moved = fk_transforms(m, g * root, state);
    for (int part = 0; part < 3; ++part)
        REQUIRE(max_abs_diff(moved[part].matrix(), (g * base[part]).matrix()) < 1e-12);
}

TEST_CASE("state of an unrelated subtree leaves a part bit-identical") {
    KinematicModel m;
    m.parts = {{"root", ""}, {"left", ""}, {"right", ""}};
    Joint jl, jr;
    jl.kind = JointKind::revolute;
    jl.axis = Eigen::Vector3d::UnitZ();
    jl.origin = make_iso(Eigen::Matrix3d::Identity(), {1, 0, 0});
    jr.kind = JointKind::revolute;
    jr.axis = Eigen::Vector3d::UnitY();
    jr.origin = make_iso(Eigen::Matrix3d::Identity(), {-1, 0, 0});
    m.joints = {{jl, 0, 1, "jl"}, {jr, 0, 2, "jr"}};

    const Eigen::Isometry3d root =
        make_iso(rodrigues({1, 2, 3}, 0.7), {0.1, 0.2, 0.3});
    const auto a = fk_transforms(m, root, JointState{0.4, 0.9});
    const auto b = fk_transforms(m, root, JointState{0.4, -2.2});
    REQUIRE(std::memcmp(a[1].matrix().data(), b[1].matrix().data(),
                        sizeof(double) * 16) == 0);
}

TEST_CASE("limits clamp or reject according to the mode") {
    KinematicModel m = two_part_revolute();
    m.joints[0].joint.angle_limits = Limits{-0.5, 0.5};

    const auto clamped = forward_kinematics(m, PartPose{}, JointState{2.0}, LimitMode::clamp);
    const auto at_limit = forward_kinematics(m, PartPose{}, JointState{0.5}, LimitMode::clamp);
    REQUIRE(max_abs_diff(rot6d_to_matrix(clamped[1].rotation),
                         rot6d_to_matrix(at_limit[1].rotation)) < 1e-12);

    REQUIRE_THROWS_AS(
        forward_kinematics(m, PartPose{}, JointState{2.0}, LimitMode::reject),
        JointLimitError);
    // In-range states pass through the reject mode untouched.
    REQUIRE_NOTHROW(forward_kinematics(m, PartPose{}, JointState{0.25}, LimitMode::reject));
}

TEST_CASE("welded parts follow their parent rigidly") {
    KinematicModel m = two_part_revolute();
    m.parts.push_back({"plate", ""});
    Weld w;
    w.parent = 1;
    w.origin = make_iso(rodrigues({0, 1, 0}, 0.3), {0, 0, 0.2});
    w.child = 2;
    m.welds.push_back(w);

    const auto world = fk_transforms(m, Eigen::Isometry3d::Identity(), JointState{1.1});
    REQUIRE(max_abs_diff(world[2].matrix(), (world[1] * w.origin).matrix()) < 1e-12);
}

TEST_CASE("state size mismatches are shape errors") {
    const KinematicModel m = two_part_revolute();
    REQUIRE_THROWS_AS(forward_kinematics(m, PartPose{}, JointState{}), ShapeError);
    REQUIRE_THROWS_AS(forward_kinematics(m, PartPose{}, JointState{0.0, 0.0}), ShapeError);
}

TEST_CASE("validate_model reports structural problems") {
    SECTION("well-formed model passes") {
        REQUIRE(validate_model(two_part_revolute()).ok());
    }
    SECTION("cycle") {
        KinematicModel m = two_part_revolute();
        Joint j;
        m.joints.push_back({j, 1, 0, "back"});
        REQUIRE_FALSE(validate_model(m).ok());
    }
    SECTION("two parents") {
        KinematicModel m = two_part_revolute();
        m.parts.push_back({"extra", ""});
        Joint j;
        m.joints.push_back({j, 0, 2, "a"});
        m.joints.push_back({j, 1, 2, "b"});
        REQUIRE_FALSE(validate_model(m).ok());
    }
    SECTION("unreachable part") {
        KinematicModel m = two_part_revolute();
        m.parts.push_back({"floating", ""});
        REQUIRE_FALSE(validate_model(m).ok());
    }
    SECTION("non-unit axis") {
        KinematicModel m = two_part_revolute();
        m.joints[0].joint.axis = {0, 0, 2};
        REQUIRE_FALSE(validate_model(m).ok());
    }
    SECTION("inverted limits") {
        KinematicModel m = two_part_revolute();
        m.joints[0].joint.angle_limits = Limits{1.0, -1.0};
        REQUIRE_FALSE(validate_model(m).ok());
    }
    SECTION("bad part reference") {
        KinematicModel m = two_part_revolute();
        m.joints[0].child = 7;
        REQUIRE_FALSE(validate_model(m).ok());
    }
}

TEST_CASE("fk jacobian matches central finite differences") {
    Rng rng(59);
    const double h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        JointState state;
        const KinematicModel m = random_chain(rng, state);
        const Rot6D rr{rng.normal3(), rng.normal3()};
        const Eigen::Vector3d rt = rng.normal3();

        const auto fk = forward_kinematics_with_jacobian(m, rr, rt, state);
        const int np = fk.n_params;
        REQUIRE(np == 9 + m.state_size());

        for (int p = 0; p < np; ++p) {
            Rot6D rp = rr, rm = rr;
            Eigen::Vector3d tp = rt, tm = rt;
            JointState sp = state, sm = state;
            if (p < 3) {
                rp.c1[p] += h;
                rm.c1[p] -= h;
            } else if (p < 6) {
                rp.c2[p - 3] += h;
                rm.c2[p - 3] -= h;
            } else if (p < 9) {
                tp[p - 6] += h;
                tm[p - 6] -= h;
            } else {
                sp[p - 9] += h;
                sm[p - 9] -= h;
            }
            const auto plus = forward_kinematics_with_jacobian(m, rp, tp, sp);
            const auto minus = forward_kinematics_with_jacobian(m, rm, tm, sm);
            for (std::size_t part = 0; part < m.parts.size(); ++part) {
                const Eigen::Matrix3d fdR =
                    (plus.world[part].linear() - minus.world[part].linear()) / (2 * h);
                const Eigen::Vector3d fdT =
                    (plus.world[part].translation() - minus.world[part].translation()) /
                    (2 * h);
                worst = std::max(worst, max_abs_diff(fdR, fk.dworld[part][p].rot));
                worst = std::max(worst, (fdT - fk.dworld[part][p].trans).norm());
            }
        }
    }
    REQUIRE(worst < 1e-6);
}

TEST_CASE("clamped scalars have zero derivative") {
    KinematicModel m = two_part_revolute();
    m.joints[0].joint.angle_limits = Limits{-0.5, 0.5};
    const auto fk = forward_kinematics_with_jacobian(m, Rot6D::identity(),
                                                     Eigen::Vector3d::Zero(),
                                                     JointState{2.0});
    REQUIRE(fk.dworld[1][9].rot.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(fk.dworld[1][9].trans.norm() == 0.0);
}
