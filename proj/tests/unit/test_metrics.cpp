#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "artifit/metrics.hpp"
#include "artifit/rng.hpp"
#include "artifit/shapes.hpp"
#include "support/test_util.hpp"

using namespace artifit;

namespace {

PartPose make_pose(const Eigen::Matrix3d& rot, const Eigen::Vector3d& trans) {
    return {matrix_to_rot6d(rot), trans};
}

Eigen::MatrixXd random_skeleton(int joints, Rng& rng) {
    Eigen::MatrixXd j(joints, 3);
    for (int i = 0; i < joints; ++i) j.row(i) = rng.normal3().transpose();
    return j;
}

// Closed-form similarity Procrustes by Horn's quaternion method: rotation from
// the dominant eigenvector of the 4x4 correlation form, least-squares scale,
// centroid translation. Shares no code with the library path.
double horn_aligned_error_mm(const Eigen::MatrixXd& gt, const Eigen::MatrixXd& est) {
    const Eigen::RowVector3d gc = gt.colwise().mean();
    const Eigen::RowVector3d ec = est.colwise().mean();
    const Eigen::MatrixXd g = gt.rowwise() - gc;
    const Eigen::MatrixXd e = est.rowwise() - ec;

    Eigen::Matrix3d m = Eigen::Matrix3d::Zero(); // m(a,b) = sum_i e_ia * g_ib
    for (Eigen::Index i = 0; i < g.rows(); ++i)
        m += e.row(i).transpose() * g.row(i);

    Eigen::Matrix4d n;
    n(0, 0) = m(0, 0) + m(1, 1) + m(2, 2);
    n(0, 1) = m(1, 2) - m(2, 1);
    n(0, 2) = m(2, 0) - m(0, 2);
    n(0, 3) = m(0, 1) - m(1, 0);
    n(1, 1) = m(0, 0) - m(1, 1) - m(2, 2);
    n(1, 2) = m(0, 1) + m(1, 0);
    n(1, 3) = m(2, 0) + m(0, 2);
    n(2, 2) = -m(0, 0) + m(1, 1) - m(2, 2);
    n(2, 3) = m(1, 2) + m(2, 1);
    n(3, 3) = -m(0, 0) - m(1, 1) + m(2, 2);
    n(1, 0) = n(0, 1);
    n(2, 0) = n(0, 2);
    n(3, 0) = n(0, 3);
    n(2, 1) = n(1, 2);
    n(3, 1) = n(1, 3);
    n(3, 2) = n(2, 3);

    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(n);
    const Eigen::Vector4d q = eig.eigenvectors().col(3); // largest eigenvalue
    const Eigen::Matrix3d rot =
        Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized().toRotationMatrix();

    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        num += g.row(i).dot((rot * e.row(i).transpose()).transpose());
        den += e.row(i).squaredNorm();
    }
    const double scale = num / den;

    double total = 0.0;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const Eigen::Vector3d aligned =
            scale * (rot * e.row(i).transpose()) + gc.transpose();
        total += (gt.row(i).transpose() - aligned).norm();
    }
    return total / static_cast<double>(g.rows()) * 1000.0;
}

// Two unit-scale boxes: a 40 cm "body" cube at the origin corner and a 40 cm
// two-part "object" cube 5 mm away along +x — touching distance but zero
// penetration, so the reference scene is physically clean.
struct EvalFixture {
    Scene scene;

    EvalFixture() {
        scene.body_mesh =
            make_box(Eigen::Vector3d(0.2, 0.2, 0.2), Eigen::Vector3d(0.4, 0.4, 0.4));
        scene.object_mesh = make_box(Eigen::Vector3d(0.605, 0.2, 0.2),
                                     Eigen::Vector3d(0.4, 0.4, 0.4));
        scene.object_parts = {
            make_pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.605, 0.2, 0.2)),
            make_pose(testutil::rodrigues(Eigen::Vector3d::UnitZ(), 0.3),
                      Eigen::Vector3d(0.7, 0.3, 0.2)),
        };
    }

    Scene translated(const Eigen::Vector3d& shift) const {
        Scene out = scene;
        for (auto& v : out.object_mesh.vertices) v += shift;
        for (auto& p : out.object_parts) p.translation += shift;
        return out;
    }
};

EvalConfig fast_cfg() {
    EvalConfig cfg;
    cfg.iou_resolution = 64;
    return cfg;
}

std::string meta(const EvalReport& r, const std::string& key) {
    for (const auto& [k, v] : r.metadata)
        if (k == key) return v;
    return "<missing>";
}

} // namespace

TEST_CASE("pose errors vanish when the estimate matches the reference") {
    Rng rng(61);
    std::vector<PartPose> parts;
    for (int i = 0; i < 10; ++i)
        parts.push_back(make_pose(testutil::random_rotation(rng), rng.normal3()));

    const PoseErrorReport r = part_pose_errors(parts, parts);
    REQUIRE(r.rotation_deg.size() == 10);
    for (double d : r.rotation_deg) CHECK(d <= 1e-9);
    for (double d : r.translation_mm) CHECK(d <= 1e-9);
    CHECK(r.mean_rotation_deg <= 1e-9);
    CHECK(r.mean_translation_mm <= 1e-9);
}

TEST_CASE("a quarter-turn and a decimeter offset score ninety degrees and a "
          "hundred millimeters") {
    const PartPose gt = make_pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
    const PartPose quarter =
        make_pose(testutil::rodrigues(Eigen::Vector3d::UnitZ(),
                                      std::numbers::pi / 2.0),
                  Eigen::Vector3d::Zero());
    const PartPose offset =
        make_pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.1, 0.0, 0.0));

    const PoseErrorReport rot = part_pose_errors({gt}, {quarter});
    CHECK(rot.rotation_deg[0] == Catch::Approx(90.0).margin(1e-9));
    CHECK(rot.translation_mm[0] == Catch::Approx(0.0).margin(1e-9));

    const PoseErrorReport tr = part_pose_errors({gt}, {offset});
    CHECK(tr.rotation_deg[0] == Catch::Approx(0.0).margin(1e-9));
    CHECK(tr.translation_mm[0] == Catch::Approx(100.0).margin(1e-9));
}

TEST_CASE("rotation error matches a quaternion oracle and is symmetric") {
    Rng rng(62);
    for (int trial = 0; trial < 20; ++trial) {
        const PartPose a = make_pose(testutil::random_rotation(rng), rng.normal3());
        const PartPose b = make_pose(testutil::random_rotation(rng), rng.normal3());

        const PoseErrorReport fwd = part_pose_errors({a}, {b});
        const PoseErrorReport rev = part_pose_errors({b}, {a});
        const double oracle_deg =
            testutil::quat_angle(rot6d_to_matrix(a.rotation),
                                 rot6d_to_matrix(b.rotation)) *
            180.0 / std::numbers::pi;

        CHECK(fwd.rotation_deg[0] == Catch::Approx(oracle_deg).margin(1e-6));
        CHECK(fwd.rotation_deg[0] == Catch::Approx(rev.rotation_deg[0]).margin(1e-9));
        CHECK(fwd.rotation_deg[0] >= 0.0);
        CHECK(fwd.rotation_deg[0] <= 180.0);
    }
}

TEST_CASE("pose lists with mismatched counts are rejected") {
    const PartPose p = make_pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
    CHECK_THROWS_AS(part_pose_errors({p, p}, {p}), ShapeError);
    CHECK_THROWS_AS(part_pose_errors({}, {}), EmptyInputError);
}

TEST_CASE("joint errors vanish for identical skeletons") {
    Rng rng(63);
    const Eigen::MatrixXd joints = random_skeleton(17, rng);
    const JointErrorReport r = pa_mpjpe(joints, joints);
    CHECK(r.mpjpe_mm == Catch::Approx(0.0).margin(1e-9));
    CHECK(r.pa_mpjpe_mm == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("a similarity transform is removed before the aligned error") {
    Rng rng(64);
    const Eigen::MatrixXd gt = random_skeleton(17, rng);
    const Eigen::Matrix3d rot = testutil::random_rotation(rng);
    const Eigen::RowVector3d trans(0.3, -0.2, 0.5);

    SECTION("rigid motion") {
        const Eigen::MatrixXd est = (gt * rot.transpose()).rowwise() + trans;
        const JointErrorReport r = pa_mpjpe(gt, est);
        CHECK(r.mpjpe_mm > 0.0);
        CHECK(r.pa_mpjpe_mm <= 1e-6);
    }

    SECTION("scaled motion") {
        const Eigen::MatrixXd est = (1.3 * gt * rot.transpose()).rowwise() + trans;
        const JointErrorReport r = pa_mpjpe(gt, est);
        CHECK(r.mpjpe_mm > 0.0);
        CHECK(r.pa_mpjpe_mm <= 1e-6);
    }
}

TEST_CASE("the aligned error matches an independent closed-form oracle") {
    Rng rng(65);
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::MatrixXd gt = random_skeleton(17, rng);
        const Eigen::Matrix3d rot = testutil::random_rotation(rng);
        Eigen::MatrixXd est =
            (rng.uniform(0.7, 1.4) * gt * rot.transpose()).rowwise() +
            Eigen::RowVector3d(rng.normal(), rng.normal(), rng.normal());
        for (Eigen::Index i = 0; i < est.rows(); ++i)
            est.row(i) += 0.05 * rng.normal3().transpose();

        const JointErrorReport r = pa_mpjpe(gt, est);
        CHECK(r.pa_mpjpe_mm ==
              Catch::Approx(horn_aligned_error_mm(gt, est)).margin(1e-6));
        CHECK(r.pa_mpjpe_mm <= r.mpjpe_mm + 1e-9);
    }
}

TEST_CASE("joint error units are millimeters") {
    Eigen::MatrixXd gt(3, 3);
    gt << 0, 0, 0, 1, 0, 0, 0, 1, 0;
    Eigen::MatrixXd est = gt;
    est.col(0).array() += 0.001;

    const JointErrorReport r = pa_mpjpe(gt, est);
    CHECK(r.mpjpe_mm == Catch::Approx(1.0).margin(1e-9));
    CHECK(r.pa_mpjpe_mm <= 1e-6);
}

TEST_CASE("degenerate skeletons are rejected") {
    Rng rng(66);
    const Eigen::MatrixXd good = random_skeleton(10, rng);

    Eigen::MatrixXd collinear(10, 3);
    for (int i = 0; i < 10; ++i)
        collinear.row(i) = static_cast<double>(i) * Eigen::RowVector3d(1.0, 2.0, 3.0);
    Eigen::MatrixXd coincident = Eigen::MatrixXd::Zero(10, 3);

    CHECK_THROWS_AS(pa_mpjpe(collinear, good), DegenerateGeometryError);
    CHECK_THROWS_AS(pa_mpjpe(good, collinear), DegenerateGeometryError);
    CHECK_THROWS_AS(pa_mpjpe(coincident, good), DegenerateGeometryError);
    CHECK_THROWS_AS(pa_mpjpe(good, random_skeleton(9, rng)), ShapeError);
    CHECK_THROWS_AS(pa_mpjpe(random_skeleton(2, rng), random_skeleton(2, rng)),
                    ShapeError);
    CHECK_THROWS_AS(pa_mpjpe(Eigen::MatrixXd::Zero(5, 2), Eigen::MatrixXd::Zero(5, 2)),
                    ShapeError);
}

TEST_CASE("an identical scene reports zero errors, full overlap, no penetration") {
    const EvalFixture fx;
    const EvalReport r = eval_report(fx.scene, fx.scene, fast_cfg());

    CHECK(r.pose.mean_rotation_deg <= 1e-9);
    CHECK(r.pose.mean_translation_mm <= 1e-9);
    CHECK(r.chamfer_mm == Catch::Approx(0.0).margin(1e-12));
    CHECK(r.voxel_iou_pct == Catch::Approx(100.0).margin(1e-12));
    CHECK(r.penetration_mm == Catch::Approx(0.0).margin(1e-12));
    CHECK(r.contact_mm >= 5.0 - 1e-9); // the fixture's built-in 5 mm gap
    CHECK(r.contact_mm < 20.0);
    CHECK_FALSE(r.joints.has_value());

    CHECK(meta(r, "sample_seed") == "2024");
    CHECK(meta(r, "surface_samples") == "10000");
    CHECK(meta(r, "iou_resolution") == "64");
    CHECK(meta(r, "iou_mode") == "solid");
    CHECK(meta(r, "surface_pathway") == "posed-mesh");
    CHECK(meta(r, "contact_clip_mm") == "200");

    // The report grid defaults to the finest configured level.
    CHECK(EvalConfig{}.iou_resolution == 128);
}

TEST_CASE("a translated estimate scores exactly its offset") {
    const EvalFixture fx;
    const Scene est = fx.translated(Eigen::Vector3d(0.1, 0.0, 0.0));
    const EvalReport r = eval_report(fx.scene, est, fast_cfg());

    CHECK(r.pose.mean_translation_mm == Catch::Approx(100.0).margin(1e-6));
    CHECK(r.pose.mean_rotation_deg <= 1e-9);
    CHECK(r.chamfer_mm > 10.0);
    CHECK(r.voxel_iou_pct < 100.0);
    CHECK(r.voxel_iou_pct > 0.0);
}

TEST_CASE("an estimate far from the body clips the contact value") {
    const EvalFixture fx;
    const Scene est = fx.translated(Eigen::Vector3d(0.35, 0.0, 0.0));
    const EvalReport r = eval_report(fx.scene, est, fast_cfg());

    CHECK(r.contact_mm == Catch::Approx(200.0).margin(1e-12));
    CHECK(r.penetration_mm == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("an overlapping estimate reports the deepest incursion") {
    const EvalFixture fx;
    // Shift the object 25 mm toward the body: its near face crosses the 5 mm
    // gap and sits 20 mm inside, where the interior of that face is exactly
    // 20 mm from the nearest body surface.
    const Scene est = fx.translated(Eigen::Vector3d(-0.025, 0.0, 0.0));
    const EvalReport r = eval_report(fx.scene, est, fast_cfg());

    CHECK(r.penetration_mm == Catch::Approx(20.0).margin(1e-6));
    CHECK(r.contact_mm < 20.0);
}

TEST_CASE("reports are bit-identical across repeated calls") {
    const EvalFixture fx;
    const Scene est = fx.translated(Eigen::Vector3d(0.03, 0.01, -0.02));
    const EvalReport a = eval_report(fx.scene, est, fast_cfg());
    const EvalReport b = eval_report(fx.scene, est, fast_cfg());

    CHECK(a.chamfer_mm == b.chamfer_mm);
    CHECK(a.voxel_iou_pct == b.voxel_iou_pct);
    CHECK(a.penetration_mm == b.penetration_mm);
    CHECK(a.contact_mm == b.contact_mm);
    CHECK(a.pose.mean_rotation_deg == b.pose.mean_rotation_deg);
    CHECK(a.pose.mean_translation_mm == b.pose.mean_translation_mm);
    CHECK(a.pose.rotation_deg == b.pose.rotation_deg);
    CHECK(a.pose.translation_mm == b.pose.translation_mm);
    CHECK(a.metadata == b.metadata);
}

TEST_CASE("skeleton errors ride along when both scenes carry joints") {
    EvalFixture fx;
    Rng rng(67);
    fx.scene.body_joints = random_skeleton(17, rng);

    Scene est = fx.scene;
    const EvalReport same = eval_report(fx.scene, est, fast_cfg());
    REQUIRE(same.joints.has_value());
    CHECK(same.joints->mpjpe_mm <= 1e-9);

    est.body_joints.resize(0, 3);
    CHECK_THROWS_AS(eval_report(fx.scene, est, fast_cfg()), ShapeError);
}

TEST_CASE("evaluation config bounds are enforced") {
    const EvalFixture fx;
    EvalConfig cfg;
    cfg.iou_resolution = 0;
    CHECK_THROWS_AS(eval_report(fx.scene, fx.scene, cfg), ParameterError);
    cfg = {};
    cfg.surface_samples = 0;
    CHECK_THROWS_AS(eval_report(fx.scene, fx.scene, cfg), ParameterError);
}
