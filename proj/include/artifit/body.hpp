#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "artifit/error.hpp"
#include "artifit/geometry.hpp"
#include "artifit/kinematics.hpp"
#include "artifit/rotation.hpp"
#include "artifit/shapes.hpp"
#include "artifit/voxel.hpp"

namespace artifit {

// Linear-blend-skinned human body. Joints form a tree ordered so that every
// parent precedes its children; shape coefficients displace vertices only
// (rest joint locations are shared across shapes).
struct BodyModel {
    Eigen::MatrixXd template_vertices;         // V x 3, rest pose (meters)
    Eigen::MatrixXd rest_joints;               // J x 3
    std::vector<int> parents;                  // parents[0] == -1
    Eigen::MatrixXd weights;                   // V x J, rows sum to 1
    std::vector<Eigen::MatrixXd> shape_basis;  // S entries of V x 3
    std::vector<std::string> joint_names;      // size J
    std::vector<std::array<int, 3>> faces;     // skin triangulation
    int hand_joints = 0;  // trailing joints that belong to the two hands

    int vertex_count() const { return static_cast<int>(template_vertices.rows()); }
    int joint_count() const { return static_cast<int>(rest_joints.rows()); }
    int shape_count() const { return static_cast<int>(shape_basis.size()); }
    int body_joint_count() const { return joint_count() - hand_joints; }

    void validate() const {
        const int v = vertex_count(), j = joint_count();
        if (v == 0 || j == 0) throw ShapeError("body model has no vertices or joints");
        if (template_vertices.cols() != 3 || rest_joints.cols() != 3)
            throw ShapeError("body vertex and joint tables must have 3 columns");
        if (static_cast<int>(parents.size()) != j)
            throw ShapeError("parent table size does not match the joint count");
        if (parents[0] != -1) throw TopologyError("joint 0 must be the root");
        for (int k = 1; k < j; ++k)
            if (parents[k] < 0 || parents[k] >= k)
                throw TopologyError("joint parents must precede their children");
        if (weights.rows() != v || weights.cols() != j)
            throw ShapeError("skinning weight matrix must be vertices x joints");
        for (int r = 0; r < v; ++r) {
            if (weights.row(r).minCoeff() < -1e-9)
                throw ShapeError("skinning weights must be non-negative");
            if (std::abs(weights.row(r).sum() - 1.0) > 1e-6)
                throw ShapeError("skinning weight rows must sum to 1");
        }
        for (const auto& basis : shape_basis)
            if (basis.rows() != v || basis.cols() != 3)
                throw ShapeError("shape basis entries must be vertices x 3");
        if (static_cast<int>(joint_names.size()) != j)
            throw ShapeError("joint name table size does not match the joint count");
        if (hand_joints < 0 || hand_joints >= j)
            throw ShapeError("hand joint count out of range");
        for (const auto& f : faces)
            for (int k = 0; k < 3; ++k)
                if (f[k] < 0 || f[k] >= v)
                    throw TopologyError("face vertex index out of range");
    }

    // Rest vertices displaced by the shape coefficients.
    Eigen::MatrixXd shaped_vertices(const Eigen::VectorXd& beta) const {
        if (beta.size() != shape_count())
            throw ShapeError("shape coefficient count does not match the model");
        Eigen::MatrixXd v = template_vertices;
        for (int s = 0; s < shape_count(); ++s) v += beta[s] * shape_basis[s];
        return v;
    }
};

// Full pose: shape, root frame, and one axis-angle rotation per non-root
// joint, split into the body chain and the trailing hand joints.
struct BodyParams {
    Eigen::VectorXd beta;
    Rot6D root_rotation = Rot6D::identity();
    Eigen::Vector3d root_translation = Eigen::Vector3d::Zero();
    std::vector<Eigen::Vector3d> theta_body;
    std::vector<Eigen::Vector3d> theta_hands;

    static BodyParams rest(const BodyModel& m) {
        BodyParams p;
        p.beta = Eigen::VectorXd::Zero(m.shape_count());
        p.theta_body.assign(m.body_joint_count() - 1, Eigen::Vector3d::Zero());
        p.theta_hands.assign(m.hand_joints, Eigen::Vector3d::Zero());
        return p;
    }

    // Axis-angle of non-root joint j (1-based over the combined ordering).
    const Eigen::Vector3d& theta(int j, const BodyModel& m) const {
        const int body = m.body_joint_count();
        return j < body ? theta_body[j - 1] : theta_hands[j - body];
    }
};

struct PosedBody {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<Eigen::Vector3d> joints;
};

namespace detail {

inline void check_pose_sizes(const BodyModel& m, const BodyParams& p) {
    if (static_cast<int>(p.theta_body.size()) != m.body_joint_count() - 1)
        throw ShapeError("body joint rotation count does not match the model");
    if (static_cast<int>(p.theta_hands.size()) != m.hand_joints)
        throw ShapeError("hand joint rotation count does not match the model");
}

// World transform per joint: the root carries the decoded 6D rotation and the
// translation, every other joint rotates about its rest offset from its parent.
inline std::vector<Eigen::Isometry3d> joint_transforms(const BodyModel& m,
                                                       const BodyParams& p) {
    check_pose_sizes(m, p);
    std::vector<Eigen::Isometry3d> g(m.joint_count());
    g[0] = Eigen::Isometry3d::Identity();
    g[0].linear() = rot6d_to_matrix(p.root_rotation);
    g[0].translation() = p.root_translation + m.rest_joints.row(0).transpose();
    for (int j = 1; j < m.joint_count(); ++j) {
        Eigen::Isometry3d local = Eigen::Isometry3d::Identity();
        local.linear() = exp_so3(p.theta(j, m));
        local.translation() =
            (m.rest_joints.row(j) - m.rest_joints.row(m.parents[j])).transpose();
        g[j] = g[m.parents[j]] * local;
    }
    return g;
}

} // namespace detail

// Linear blend skinning: every vertex follows the weighted combination of its
// joints' transforms, each taken relative to that joint's rest location.
inline PosedBody pose_body(const BodyModel& m, const BodyParams& p) {
    const std::vector<Eigen::Isometry3d> g = detail::joint_transforms(m, p);
    const Eigen::MatrixXd shaped = m.shaped_vertices(p.beta);

    PosedBody out;
    out.joints.resize(m.joint_count());
    for (int j = 0; j < m.joint_count(); ++j) out.joints[j] = g[j].translation();

    out.vertices.resize(m.vertex_count());
    for (int v = 0; v < m.vertex_count(); ++v) {
        const Eigen::Vector3d rest = shaped.row(v).transpose();
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        for (int j = 0; j < m.joint_count(); ++j) {
            const double w = m.weights(v, j);
            if (w == 0.0) continue;
            const Eigen::Vector3d rj = m.rest_joints.row(j).transpose();
            acc += w * (g[j].linear() * (rest - rj) + g[j].translation());
        }
        out.vertices[v] = acc;
    }
    return out;
}

inline TriMesh posed_mesh(const BodyModel& m, const PosedBody& posed) {
    TriMesh mesh;
    mesh.vertices = posed.vertices;
    mesh.triangles = m.faces;
    return mesh;
}

// Flat pose vector for gradient-based work on a fixed shape:
//   [0..2] root seed c1, [3..5] root seed c2, [6..8] root translation,
//   then 3 axis-angle scalars per non-root joint in model order.
inline Eigen::VectorXd pack_body_pose(const BodyModel& m, const BodyParams& p) {
    detail::check_pose_sizes(m, p);
    Eigen::VectorXd x(9 + 3 * (m.joint_count() - 1));
    x.segment<3>(0) = p.root_rotation.c1;
    x.segment<3>(3) = p.root_rotation.c2;
    x.segment<3>(6) = p.root_translation;
    for (int j = 1; j < m.joint_count(); ++j)
        x.segment<3>(9 + 3 * (j - 1)) = p.theta(j, m);
    return x;
}

inline BodyParams unpack_body_pose(const BodyModel& m, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& beta) {
    if (x.size() != 9 + 3 * (m.joint_count() - 1))
        throw ShapeError("body pose vector has the wrong size");
    BodyParams p;
    p.beta = beta;
    p.root_rotation = {x.segment<3>(0), x.segment<3>(3)};
    p.root_translation = x.segment<3>(6);
    for (int j = 1; j < m.joint_count(); ++j) {
        const Eigen::Vector3d t = x.segment<3>(9 + 3 * (j - 1));
        if (j < m.body_joint_count())
            p.theta_body.push_back(t);
        else
            p.theta_hands.push_back(t);
    }
    return p;
}

struct BodyJointJacobian {
    std::vector<Eigen::Vector3d> joints;  // posed joint positions
    Eigen::MatrixXd dpos;                 // (3 * joints) x pose parameters
};

// Joint positions and their exact derivative with respect to the flat pose
// vector. A joint position depends on the root frame and the rotations of its
// strict ancestors only.
inline BodyJointJacobian body_joint_jacobian(const BodyModel& m, const BodyParams& p) {
    detail::check_pose_sizes(m, p);
    const int nj = m.joint_count();
    const int np = 9 + 3 * (nj - 1);

    std::array<Eigen::Matrix3d, 6> root_jac;
    Eigen::Isometry3d g0 = Eigen::Isometry3d::Identity();
    g0.linear() = rot6d_to_matrix(p.root_rotation, &root_jac);
    g0.translation() = p.root_translation + m.rest_joints.row(0).transpose();

    std::vector<Eigen::Isometry3d> g(nj, g0);
    std::vector<std::vector<TransformDiff>> dg(nj, std::vector<TransformDiff>(np));
    for (int k = 0; k < 6; ++k) dg[0][k].rot = root_jac[k];
    for (int k = 0; k < 3; ++k) dg[0][6 + k].trans = Eigen::Vector3d::Unit(k);

    for (int j = 1; j < nj; ++j) {
        const int par = m.parents[j];
        const Eigen::Vector3d theta = p.theta(j, m);
        Eigen::Isometry3d local = Eigen::Isometry3d::Identity();
        local.linear() = exp_so3(theta);
        local.translation() =
            (m.rest_joints.row(j) - m.rest_joints.row(par)).transpose();
        g[j] = g[par] * local;

        for (int q = 0; q < np; ++q)
            dg[j][q] = detail::diff_times_rigid(dg[par][q], local);
        const std::array<Eigen::Matrix3d, 3> dR = exp_so3_derivatives(theta);
        Eigen::Isometry3d pre = g[par];
        pre.translation() += pre.linear() * local.translation();
        for (int k = 0; k < 3; ++k) {
            TransformDiff dlocal;
            dlocal.rot = dR[k];
            const TransformDiff own = detail::rigid_times_diff(pre, dlocal);
            dg[j][9 + 3 * (j - 1) + k].rot += own.rot;
            dg[j][9 + 3 * (j - 1) + k].trans += own.trans;
        }
    }

    BodyJointJacobian out;
    out.joints.resize(nj);
    out.dpos = Eigen::MatrixXd::Zero(3 * nj, np);
    for (int j = 0; j < nj; ++j) {
        out.joints[j] = g[j].translation();
        for (int q = 0; q < np; ++q) out.dpos.block<3, 1>(3 * j, q) = dg[j][q].trans;
    }
    return out;
}

// Per-joint displacement suggestions from per-vertex pushes: each joint adopts
// the push of its most strongly associated vertex, scaled by that vertex's
// skinning weight. Ties go to the lowest vertex index. Depths in millimeters.
inline std::vector<Eigen::Vector3d> aggregate_to_joints(
    const BodyModel& m, const std::vector<double>& vertex_depth_mm,
    const std::vector<Eigen::Vector3d>& vertex_direction) {
    if (static_cast<int>(vertex_depth_mm.size()) != m.vertex_count() ||
        static_cast<int>(vertex_direction.size()) != m.vertex_count())
        throw ShapeError("per-vertex push tables must match the vertex count");
    std::vector<Eigen::Vector3d> offsets(m.joint_count(), Eigen::Vector3d::Zero());
    for (int j = 0; j < m.joint_count(); ++j) {
        double best = 0.0;
        int best_v = -1;
        for (int v = 0; v < m.vertex_count(); ++v) {
            const double score = m.weights(v, j) * vertex_depth_mm[v];
            if (score > best) {
                best = score;
                best_v = v;
            }
        }
        if (best_v >= 0) offsets[j] = best * vertex_direction[best_v];
    }
    return offsets;
}

// Solid occupancy pyramid of the posed skin. The finest level is voxelized
// directly (surface cells plus winding-filled interior); coarser levels are
// max-pooled from it, which marks exactly the coarse cells with any occupied
// fine child.
inline MultiResVoxel multires_voxelize(const BodyModel& m, const PosedBody& posed,
                                       const GridSpec& base_spec) {
    base_spec.validate();
    GridSpec fine = base_spec;
    fine.resolution *= 8;
    MultiResVoxel out;
    out.levels[3] = voxelize(posed_mesh(m, posed), fine, VoxelizeMode::solid).grid;
    for (int level = 2; level >= 0; --level)
        out.levels[level] = downsample_max(out.levels[3], 1 << (3 - level));
    return out;
}

// ---------------------------------------------------------------------------
// Deterministic synthetic humanoid: 22 body joints (optionally 15 more per
// hand), capsule-tube skin with one closed component per bone, rigid weights
// to each bone's proximal joint with a blended distal ring, and 10 smooth
// parametric shape fields. Intended for tests, demos, and as a stand-in
// template when no learned body asset is available.
// ---------------------------------------------------------------------------
inline BodyModel make_synthetic_body(bool with_hands = false) {
    struct JointSpec {
        std::string name;
        int parent;
        Eigen::Vector3d pos;
    };
    // Upright along +z, facing +x, arms in a T along +-y. Left is +y.
    std::vector<JointSpec> js = {
        {"pelvis", -1, {0.00, 0.00, 0.95}},
        {"left_hip", 0, {0.00, 0.09, 0.91}},
        {"right_hip", 0, {0.00, -0.09, 0.91}},
        {"spine1", 0, {0.00, 0.00, 1.05}},
        {"left_knee", 1, {0.00, 0.10, 0.50}},
        {"right_knee", 2, {0.00, -0.10, 0.50}},
        {"spine2", 3, {0.00, 0.00, 1.15}},
        {"left_ankle", 4, {0.00, 0.11, 0.09}},
        {"right_ankle", 5, {0.00, -0.11, 0.09}},
        {"spine3", 6, {0.00, 0.00, 1.25}},
        {"left_foot", 7, {0.12, 0.11, 0.02}},
        {"right_foot", 8, {0.12, -0.11, 0.02}},
        {"neck", 9, {0.00, 0.00, 1.42}},
        {"left_collar", 9, {0.00, 0.07, 1.35}},
        {"right_collar", 9, {0.00, -0.07, 1.35}},
        {"head", 12, {0.00, 0.00, 1.55}},
        {"left_shoulder", 13, {0.00, 0.17, 1.38}},
        {"right_shoulder", 14, {0.00, -0.17, 1.38}},
        {"left_elbow", 16, {0.00, 0.45, 1.38}},
        {"right_elbow", 17, {0.00, -0.45, 1.38}},
        {"left_wrist", 18, {0.00, 0.70, 1.38}},
        {"right_wrist", 19, {0.00, -0.70, 1.38}},
    };
    int hand_joints = 0;
    if (with_hands) {
        static const char* fingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
        for (int side = 0; side < 2; ++side) {
            const double sy = side == 0 ? 1.0 : -1.0;
            const std::string prefix = side == 0 ? "left_" : "right_";
            const int wrist = side == 0 ? 20 : 21;
            for (int f = 0; f < 5; ++f) {
                const double fx = 0.03 * (f - 2);
                int parent = wrist;
                for (int seg = 1; seg <= 3; ++seg) {
                    js.push_back({prefix + fingers[f] + std::to_string(seg), parent,
                                  {fx, sy * (0.70 + 0.03 * seg), 1.38}});
                    parent = static_cast<int>(js.size()) - 1;
                }
            }
        }
        hand_joints = 30;
    }

    BodyModel m;
    const int nj = static_cast<int>(js.size());
    m.rest_joints.resize(nj, 3);
    m.parents.resize(nj);
    for (int j = 0; j < nj; ++j) {
        m.rest_joints.row(j) = js[j].pos.transpose();
        m.parents[j] = js[j].parent;
        m.joint_names.push_back(js[j].name);
    }
    m.hand_joints = hand_joints;

    // One capsule per bone, weighted to the proximal joint; the ring and apex
    // nearest the distal joint blend half and half.
    struct BoneRadius {
        double at(const std::string& child) const {
            if (child.find("knee") != std::string::npos) return 0.070;
            if (child.find("ankle") != std::string::npos) return 0.055;
            if (child.find("foot") != std::string::npos) return 0.040;
            if (child.find("hip") != std::string::npos) return 0.075;
            if (child.find("spine") != std::string::npos) return 0.100;
            if (child.find("neck") != std::string::npos) return 0.055;
            if (child.find("head") != std::string::npos) return 0.090;
            if (child.find("collar") != std::string::npos) return 0.050;
            if (child.find("shoulder") != std::string::npos) return 0.050;
            if (child.find("elbow") != std::string::npos) return 0.045;
            if (child.find("wrist") != std::string::npos) return 0.038;
            return 0.009;  // finger segments
        }
    } radius_of;

    struct WeightEntry {
        int vertex, joint;
        double w;
    };
    std::vector<Eigen::Vector3d> verts;
    std::vector<WeightEntry> wtrip;
    std::vector<std::array<int, 3>> faces;
    for (int j = 1; j < nj; ++j) {
        const int par = m.parents[j];
        const Eigen::Vector3d a = m.rest_joints.row(par).transpose();
        const Eigen::Vector3d b = m.rest_joints.row(j).transpose();
        const bool finger = j >= nj - hand_joints;
        const int segments = finger ? 5 : 10;
        const TriMesh cap = make_capsule(a, b, radius_of.at(m.joint_names[j]), segments);

        const int base = static_cast<int>(verts.size());
        for (int f = 0; f < static_cast<int>(cap.triangles.size()); ++f)
            faces.push_back({cap.triangles[f][0] + base, cap.triangles[f][1] + base,
                             cap.triangles[f][2] + base});
        // Capsule layout: ring at a (indices [0, s)), ring at b ([s, 2s)),
        // apex beyond a (2s), apex beyond b (2s + 1).
        for (int v = 0; v < static_cast<int>(cap.vertices.size()); ++v) {
            verts.push_back(cap.vertices[v]);
            const bool distal = (v >= segments && v < 2 * segments) ||
                                v == 2 * segments + 1;
            if (distal) {
                wtrip.push_back({base + v, par, 0.5});
                wtrip.push_back({base + v, j, 0.5});
            } else {
                wtrip.push_back({base + v, par, 1.0});
            }
        }
    }

    const int nv = static_cast<int>(verts.size());
    m.template_vertices.resize(nv, 3);
    for (int v = 0; v < nv; ++v) m.template_vertices.row(v) = verts[v].transpose();
    m.weights = Eigen::MatrixXd::Zero(nv, nj);
    for (const auto& t : wtrip) m.weights(t.vertex, t.joint) += t.w;
    m.faces = std::move(faces);

    // Ten smooth shape fields: global scale, height, girth, belly, shoulder
    // width, leg length, arm length, head size, and two sinusoidal harmonics.
    const Eigen::Vector3d pelvis = m.rest_joints.row(0).transpose();
    m.shape_basis.assign(10, Eigen::MatrixXd::Zero(nv, 3));
    for (int v = 0; v < nv; ++v) {
        const Eigen::Vector3d x = m.template_vertices.row(v).transpose();
        const Eigen::Vector3d rel = x - pelvis;
        auto bump = [](double d, double s) { return std::exp(-0.5 * d * d / (s * s)); };
        m.shape_basis[0].row(v) = (0.10 * rel).transpose();
        m.shape_basis[1].row(v) = Eigen::RowVector3d(0, 0, 0.10 * rel.z());
        m.shape_basis[2].row(v) = Eigen::RowVector3d(0.12 * x.x(), 0.12 * x.y(), 0);
        m.shape_basis[3].row(v) =
            Eigen::RowVector3d(0.08 * bump((x - Eigen::Vector3d(0.08, 0, 1.10)).norm(), 0.18), 0, 0);
        m.shape_basis[4].row(v) =
            Eigen::RowVector3d(0, 0.10 * x.y() * bump(x.z() - 1.38, 0.15), 0);
        m.shape_basis[5].row(v) =
            Eigen::RowVector3d(0, 0, x.z() < 0.9 ? 0.08 * (x.z() - 0.9) : 0.0);
        m.shape_basis[6].row(v) =
            Eigen::RowVector3d(0, 0.06 * x.y() * bump(std::abs(x.y()) - 0.5, 0.25), 0);
        m.shape_basis[7].row(v) =
            (0.10 * bump((x - Eigen::Vector3d(0, 0, 1.55)).norm(), 0.12) *
             (x - Eigen::Vector3d(0, 0, 1.55)))
                .transpose();
        m.shape_basis[8].row(v) = Eigen::RowVector3d(
            0.02 * std::sin(6.0 * x.z()), 0.02 * std::cos(6.0 * x.z()), 0);
        m.shape_basis[9].row(v) = Eigen::RowVector3d(
            0.015 * std::sin(3.0 * x.y()), 0, 0.015 * std::cos(3.0 * x.z()));
    }

    m.validate();
    return m;
}

} // namespace artifit
