#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "artifit/error.hpp"
#include "artifit/geometry.hpp"
#include "artifit/kinematics.hpp"
#include "artifit/rotation.hpp"
#include "artifit/voxel.hpp"

namespace artifit {

// ---------------------------------------------------------------------------
// Evaluation suite: pose errors, joint errors, and the assembled report.
// ---------------------------------------------------------------------------

struct PoseErrorReport {
    std::vector<double> rotation_deg;    // geodesic angle per part
    std::vector<double> translation_mm;  // Euclidean distance per part
    double mean_rotation_deg = 0.0;
    double mean_translation_mm = 0.0;
};

// Per-part pose discrepancy: geodesic rotation angle in degrees and
// translation distance in millimeters, parts matched by index.
inline PoseErrorReport part_pose_errors(const std::vector<PartPose>& gt,
                                        const std::vector<PartPose>& est) {
    if (gt.size() != est.size())
        throw ShapeError("pose lists must have matching part counts");
    if (gt.empty()) throw EmptyInputError("pose error of zero parts");

    PoseErrorReport out;
    out.rotation_deg.reserve(gt.size());
    out.translation_mm.reserve(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const double angle = geodesic_angle(rot6d_to_matrix(gt[i].rotation),
                                            rot6d_to_matrix(est[i].rotation));
        out.rotation_deg.push_back(angle * 180.0 / std::numbers::pi);
        out.translation_mm.push_back(
            (gt[i].translation - est[i].translation).norm() * 1000.0);
        out.mean_rotation_deg += out.rotation_deg.back();
        out.mean_translation_mm += out.translation_mm.back();
    }
    out.mean_rotation_deg /= static_cast<double>(gt.size());
    out.mean_translation_mm /= static_cast<double>(gt.size());
    return out;
}

struct JointErrorReport {
    double mpjpe_mm = 0.0;     // mean per-joint position error
    double pa_mpjpe_mm = 0.0;  // same after optimal similarity alignment
};

// Joint position errors for J x 3 skeletons given in meters, reported in
// millimeters. The Procrustes-aligned variant removes the best similarity
// transform (rotation, translation, uniform scale) fitting est onto gt before
// measuring; that alignment is only well-posed when the joints span a plane,
// so collinear skeletons are rejected.
inline JointErrorReport pa_mpjpe(const Eigen::MatrixXd& gt,
                                 const Eigen::MatrixXd& est) {
    if (gt.cols() != 3 || est.cols() != 3)
        throw ShapeError("joint arrays must be J x 3");
    if (gt.rows() != est.rows())
        throw ShapeError("joint arrays must have matching joint counts");
    if (gt.rows() < 3) throw ShapeError("need at least three joints");

    const auto spread_check = [](const Eigen::MatrixXd& joints, const char* label) {
        const Eigen::MatrixXd centered = joints.rowwise() - joints.colwise().mean();
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
        const Eigen::VectorXd s = svd.singularValues();
        if (!(s[0] > 0.0) || s[1] <= 1e-12 * s[0])
            throw DegenerateGeometryError(
                std::string(label) + " joints are collinear; similarity "
                                     "alignment is underdetermined");
    };
    spread_check(gt, "reference");
    spread_check(est, "estimated");

    JointErrorReport out;
    out.mpjpe_mm = (gt - est).rowwise().norm().mean() * 1000.0;

    const Eigen::Matrix4d t =
        Eigen::umeyama(est.transpose(), gt.transpose(), /*with_scaling=*/true);
    const Eigen::MatrixXd aligned =
        (est * t.topLeftCorner<3, 3>().transpose()).rowwise() +
        t.topRightCorner<3, 1>().transpose();
    out.pa_mpjpe_mm = (gt - aligned).rowwise().norm().mean() * 1000.0;
    return out;
}

// One side of an evaluation pair: the object's per-part world poses, its posed
// surface, the posed human surface, and (optionally) the body joints as a
// J x 3 matrix in meters. An empty joint matrix means "not provided".
struct Scene {
    std::vector<PartPose> object_parts;
    TriMesh object_mesh;
    TriMesh body_mesh;
    Eigen::MatrixXd body_joints = Eigen::MatrixXd(0, 3);
};

struct EvalConfig {
    int iou_resolution = 128;            // cells per axis of the report grid
    std::size_t surface_samples = 10000; // area-weighted samples per mesh
    std::uint64_t seed = 2024;
    VoxelizeMode iou_mode = VoxelizeMode::solid;
    // Label recorded in metadata describing where the estimated surface came
    // from (posed template mesh vs reconstructed isosurface); the math is the
    // same either way.
    std::string surface_pathway = "posed-mesh";

    void validate() const {
        if (iou_resolution < 1) throw ParameterError("report resolution must be >= 1");
        if (surface_samples < 1)
            throw ParameterError("need at least one surface sample");
    }
};

struct EvalReport {
    PoseErrorReport pose;
    double chamfer_mm = 0.0;
    double voxel_iou_pct = 0.0;
    double penetration_mm = 0.0;
    double contact_mm = 0.0;
    std::optional<JointErrorReport> joints;
    // Every tunable that shaped the numbers, in fixed order so serialized
    // reports are byte-stable.
    std::vector<std::pair<std::string, std::string>> metadata;
};

namespace detail {

// Shared axis-aligned grid covering both meshes with a little margin, at the
// report resolution.
inline GridSpec common_grid(const TriMesh& a, const TriMesh& b, int resolution) {
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::max());
    Eigen::Vector3d hi = Eigen::Vector3d::Constant(std::numeric_limits<double>::lowest());
    for (const TriMesh* m : {&a, &b}) {
        for (const auto& v : m->vertices) {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
    }
    const double pad = std::max(1e-6, 0.02 * (hi - lo).maxCoeff());
    GridSpec spec;
    spec.resolution = Eigen::Vector3i::Constant(resolution);
    spec.origin = lo - Eigen::Vector3d::Constant(pad);
    spec.extent = (hi - lo) + Eigen::Vector3d::Constant(2.0 * pad);
    spec.validate();
    return spec;
}

} // namespace detail

// The full evaluation of an estimated scene against its reference: part pose
// errors (reference vs estimate), chamfer distance and voxel IoU between the
// two object surfaces, penetration depth and contact value between the
// estimated object and the estimated human, and joint errors when both scenes
// carry skeletons. Pure and deterministic: identical inputs, config, and seed
// reproduce every field bit for bit.
inline EvalReport eval_report(const Scene& gt, const Scene& est,
                              const EvalConfig& cfg = {}) {
    cfg.validate();
    if ((gt.body_joints.rows() > 0) != (est.body_joints.rows() > 0))
        throw ShapeError("joints must be provided for both scenes or neither");

    EvalReport report;
    report.pose = part_pose_errors(gt.object_parts, est.object_parts);

    const PointSet gt_obj = sample_surface(gt.object_mesh, cfg.surface_samples, cfg.seed);
    const PointSet est_obj =
        sample_surface(est.object_mesh, cfg.surface_samples, cfg.seed);
    const PointSet est_body =
        sample_surface(est.body_mesh, cfg.surface_samples, cfg.seed);

    report.chamfer_mm = chamfer_distance(gt_obj, est_obj);

    const GridSpec grid =
        detail::common_grid(gt.object_mesh, est.object_mesh, cfg.iou_resolution);
    const VoxelGrid vg = voxelize(gt.object_mesh, grid, cfg.iou_mode).grid;
    const VoxelGrid ve = voxelize(est.object_mesh, grid, cfg.iou_mode).grid;
    report.voxel_iou_pct = voxel_iou(vg, ve) * 100.0;

    report.penetration_mm = penetration_depth(est.body_mesh, est_obj).max_depth_mm;
    report.contact_mm = contact_value(est_obj, est_body);

    if (gt.body_joints.rows() > 0)
        report.joints = pa_mpjpe(gt.body_joints, est.body_joints);

    report.metadata = {
        {"iou_resolution", std::to_string(cfg.iou_resolution)},
        {"iou_mode", cfg.iou_mode == VoxelizeMode::solid ? "solid" : "surface"},
        {"iou_threshold", "0.5"},
        {"surface_samples", std::to_string(cfg.surface_samples)},
        {"sample_seed", std::to_string(cfg.seed)},
        {"surface_pathway", cfg.surface_pathway},
        {"chamfer", "symmetric-mean-mm"},
        {"contact_clip_mm", "200"},
        {"penetration", "max-object-sample-depth-mm"},
    };
    return report;
}

} // namespace artifit
