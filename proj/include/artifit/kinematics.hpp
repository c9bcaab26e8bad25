#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "artifit/error.hpp"
#include "artifit/rotation.hpp"

namespace artifit {

enum class JointKind { revolute, prismatic, revolute_prismatic };

struct Limits {
    double lower = 0.0;
    double upper = 0.0;
};

// One degree-of-freedom edge of the part tree. `origin` maps the joint frame
// into the parent part frame; `axis` is a unit vector in the joint frame.
// Revolute joints rotate about the axis, prismatic joints slide along it, and
// revolute_prismatic joints do both about/along the same axis.
struct Joint {
    JointKind kind = JointKind::revolute;
    Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
    Eigen::Isometry3d origin = Eigen::Isometry3d::Identity();
    std::optional<Limits> angle_limits;  // radians (revolute, revolute_prismatic)
    std::optional<Limits> shift_limits;  // meters (prismatic, revolute_prismatic)
};

struct Part {
    std::string name;
    std::string mesh_ref; // lazily resolved path, may be empty
};

struct JointEdge {
    Joint joint;
    int parent = -1;
    int child = -1;
    std::string name;
};

// Rigid attachment produced by folding a zero-dof connection: the child part
// is pinned to the parent at a fixed origin and contributes no state.
struct Weld {
    Eigen::Isometry3d origin = Eigen::Isometry3d::Identity();
    int parent = -1;
    int child = -1;
};

struct KinematicModel {
    std::vector<Part> parts;
    std::vector<JointEdge> joints;
    std::vector<Weld> welds;
    int root = 0;

    int joint_dof(std::size_t j) const {
        return joints[j].joint.kind == JointKind::revolute_prismatic ? 2 : 1;
    }

    int state_offset(std::size_t j) const {
        int off = 0;
        for (std::size_t i = 0; i < j; ++i) off += joint_dof(i);
        return off;
    }

    int state_size() const { return state_offset(joints.size()); }
};

// Flat per-joint scalars: one entry per revolute/prismatic joint, two entries
// (angle then shift) per revolute_prismatic joint, in model joint order.
using JointState = std::vector<double>;

struct PartPose {
    Rot6D rotation = Rot6D::identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Isometry3d to_isometry() const {
        Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
        t.linear() = rot6d_to_matrix(rotation);
        t.translation() = translation;
        return t;
    }

    static PartPose from_isometry(const Eigen::Isometry3d& t) {
        return {matrix_to_rot6d(t.linear()), t.translation()};
    }
};

// Complete configuration of an articulated object: root frame plus the flat
// joint scalars.
struct ObjectPose {
    PartPose root;
    JointState joints;
};

enum class LimitMode { clamp, reject };

struct ValidationReport {
    std::vector<std::string> issues;
    bool ok() const { return issues.empty(); }
};

namespace detail {

struct IncomingEdge {
    bool is_weld = false;
    int index = -1; // into model.joints or model.welds
};

// Breadth-first part order from the root; every non-root part must have
// exactly one incoming edge. Throws on malformed trees; validate_model gives
// a full report instead of throwing.
inline void topo_order(const KinematicModel& m, std::vector<int>& order,
                       std::vector<IncomingEdge>& incoming) {
    const int n = static_cast<int>(m.parts.size());
    if (n == 0) throw TopologyError("model has no parts");
    if (m.root < 0 || m.root >= n) throw TopologyError("root part index out of range");

    incoming.assign(n, {});
    std::vector<int> indeg(n, 0);
    std::vector<std::vector<std::pair<int, IncomingEdge>>> children(n);
    auto add_edge = [&](int parent, int child, IncomingEdge e) {
        if (parent < 0 || parent >= n || child < 0 || child >= n)
            throw TopologyError("joint references a part index out of range");
        children[parent].push_back({child, e});
        ++indeg[child];
    };
    for (std::size_t j = 0; j < m.joints.size(); ++j)
        add_edge(m.joints[j].parent, m.joints[j].child, {false, static_cast<int>(j)});
    for (std::size_t w = 0; w < m.welds.size(); ++w)
        add_edge(m.welds[w].parent, m.welds[w].child, {true, static_cast<int>(w)});

    if (indeg[m.root] != 0) throw TopologyError("root part has an incoming joint");

    order.clear();
    order.reserve(n);
    order.push_back(m.root);
    for (std::size_t head = 0; head < order.size(); ++head) {
        for (const auto& [child, e] : children[order[head]]) {
            if (indeg[child] != 1)
                throw TopologyError("part '" + m.parts[child].name +
                                    "' has multiple parents");
            incoming[child] = e;
            order.push_back(child);
        }
    }
    if (static_cast<int>(order.size()) != n)
        throw TopologyError("model graph is not a single tree rooted at the root part");
}

inline Eigen::Vector3d checked_axis(const Joint& j) {
    const double n = j.axis.norm();
    if (std::abs(n - 1.0) > 1e-6)
        throw ParameterError("joint axis must be a unit vector");
    return j.axis / n;
}

// Applies the joint's limits to (angle, shift) according to the mode.
// Returns per-scalar flags saying whether the scalar was clamped.
inline std::pair<bool, bool> apply_limits(const Joint& j, double& angle, double& shift,
                                          LimitMode mode) {
    bool ca = false, cs = false;
    auto apply = [&](const std::optional<Limits>& lim, double& v, bool& flag,
                     const char* what) {
        if (!lim) return;
        if (v < lim->lower || v > lim->upper) {
            if (mode == LimitMode::reject)
                throw JointLimitError(std::string(what) + " outside joint limits");
            v = std::clamp(v, lim->lower, lim->upper);
            flag = true;
        }
    };
    apply(j.angle_limits, angle, ca, "joint angle");
    apply(j.shift_limits, shift, cs, "joint shift");
    return {ca, cs};
}

inline void read_joint_scalars(const KinematicModel& m, std::size_t j,
                               std::span<const double> state, double& angle,
                               double& shift) {
    const int off = m.state_offset(j);
    const Joint& joint = m.joints[j].joint;
    angle = 0.0;
    shift = 0.0;
    switch (joint.kind) {
        case JointKind::revolute: angle = state[off]; break;
        case JointKind::prismatic: shift = state[off]; break;
        case JointKind::revolute_prismatic:
            angle = state[off];
            shift = state[off + 1];
            break;
    }
}

// Rigid motion of a joint at the given scalars: rotate about then translate
// along the shared axis (for one axis the two orders coincide).
inline Eigen::Isometry3d joint_motion(const Joint& j, double angle, double shift) {
    const Eigen::Vector3d a = checked_axis(j);
    Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
    if (j.kind != JointKind::prismatic) t.linear() = axis_angle_to_matrix(a, angle);
    if (j.kind != JointKind::revolute) t.translation() = a * shift;
    return t;
}

} // namespace detail

// World transform of every part (part frame -> world) for the given root pose
// and joint state. Child pose = parent pose * joint origin * joint motion.
inline std::vector<Eigen::Isometry3d> fk_transforms(const KinematicModel& m,
                                                    const Eigen::Isometry3d& root_pose,
                                                    std::span<const double> state,
                                                    LimitMode mode = LimitMode::clamp) {
    if (static_cast<int>(state.size()) != m.state_size())
        throw ShapeError("joint state size does not match the model");
    std::vector<int> order;
    std::vector<detail::IncomingEdge> incoming;
    detail::topo_order(m, order, incoming);

    std::vector<Eigen::Isometry3d> world(m.parts.size(), Eigen::Isometry3d::Identity());
    world[m.root] = root_pose;
    for (std::size_t k = 1; k < order.size(); ++k) {
        const int part = order[k];
        const auto& e = incoming[part];
        if (e.is_weld) {
            const Weld& w = m.welds[e.index];
            world[part] = world[w.parent] * w.origin;
        } else {
            const JointEdge& je = m.joints[e.index];
            double angle, shift;
            detail::read_joint_scalars(m, e.index, state, angle, shift);
            detail::apply_limits(je.joint, angle, shift, mode);
            world[part] =
                world[je.parent] * je.joint.origin * detail::joint_motion(je.joint, angle, shift);
        }
    }
    return world;
}

inline std::vector<PartPose> forward_kinematics(const KinematicModel& m,
                                                const PartPose& root_pose,
                                                std::span<const double> state,
                                                LimitMode mode = LimitMode::clamp) {
    const auto world = fk_transforms(m, root_pose.to_isometry(), state, mode);
    std::vector<PartPose> poses;
    poses.reserve(world.size());
    for (const auto& w : world) poses.push_back(PartPose::from_isometry(w));
    return poses;
}

// Part transforms at identity root and all-zero state: the canonical placement
// that part grids and canonical meshes are expressed in.
inline std::vector<Eigen::Isometry3d> rest_transforms(const KinematicModel& m) {
    const JointState zero(static_cast<std::size_t>(m.state_size()), 0.0);
    return fk_transforms(m, Eigen::Isometry3d::Identity(), zero, LimitMode::clamp);
}

// Derivative of a rigid transform with respect to one scalar parameter,
// stored as the (non-rigid) pair d(rotation), d(translation).
struct TransformDiff {
    Eigen::Matrix3d rot = Eigen::Matrix3d::Zero();
    Eigen::Vector3d trans = Eigen::Vector3d::Zero();
};

namespace detail {

// d(A*B) for fixed rigid B and differential dA.
inline TransformDiff diff_times_rigid(const TransformDiff& dA, const Eigen::Isometry3d& B) {
    return {dA.rot * B.linear(), dA.rot * B.translation() + dA.trans};
}

// d(A*B) for fixed rigid A and differential dB.
inline TransformDiff rigid_times_diff(const Eigen::Isometry3d& A, const TransformDiff& dB) {
    return {A.linear() * dB.rot, A.linear() * dB.trans};
}

} // namespace detail

// Pose parameter vector layout shared by the fitting pipeline:
//   [0..2]  root rotation seed c1
//   [3..5]  root rotation seed c2
//   [6..8]  root translation (m)
//   [9..]   joint state scalars in model order
struct FkDerivatives {
    std::vector<Eigen::Isometry3d> world;            // per part
    std::vector<std::vector<TransformDiff>> dworld;  // [part][parameter]
    int n_params = 0;
};

inline FkDerivatives forward_kinematics_with_jacobian(const KinematicModel& m,
                                                      const Rot6D& root_rot,
                                                      const Eigen::Vector3d& root_t,
                                                      std::span<const double> state,
                                                      LimitMode mode = LimitMode::clamp) {
    if (static_cast<int>(state.size()) != m.state_size())
        throw ShapeError("joint state size does not match the model");
    std::vector<int> order;
    std::vector<detail::IncomingEdge> incoming;
    detail::topo_order(m, order, incoming);

    const int n_params = 9 + m.state_size();
    FkDerivatives out;
    out.n_params = n_params;
    out.world.assign(m.parts.size(), Eigen::Isometry3d::Identity());
    out.dworld.assign(m.parts.size(), std::vector<TransformDiff>(n_params));

    std::array<Eigen::Matrix3d, 6> dR0;
    const Eigen::Matrix3d R0 = rot6d_to_matrix(root_rot, &dR0);
    Eigen::Isometry3d root = Eigen::Isometry3d::Identity();
    root.linear() = R0;
    root.translation() = root_t;

    out.world[m.root] = root;
    for (int k = 0; k < 6; ++k) out.dworld[m.root][k].rot = dR0[k];
    for (int k = 0; k < 3; ++k) out.dworld[m.root][6 + k].trans = Eigen::Vector3d::Unit(k);

    for (std::size_t k = 1; k < order.size(); ++k) {
        const int part = order[k];
        const auto& e = incoming[part];
        int parent;
        Eigen::Isometry3d local = Eigen::Isometry3d::Identity();
        if (e.is_weld) {
            const Weld& w = m.welds[e.index];
            parent = w.parent;
            local = w.origin;
            out.world[part] = out.world[parent] * local;
            for (int p = 0; p < n_params; ++p)
                out.dworld[part][p] = detail::diff_times_rigid(out.dworld[parent][p], local);
            continue;
        }

        const JointEdge& je = m.joints[e.index];
        parent = je.parent;
        double angle, shift;
        detail::read_joint_scalars(m, e.index, state, angle, shift);
        const auto [clamped_angle, clamped_shift] =
            detail::apply_limits(je.joint, angle, shift, mode);
        const Eigen::Vector3d axis = detail::checked_axis(je.joint);
        const Eigen::Isometry3d motion = detail::joint_motion(je.joint, angle, shift);
        local = je.joint.origin * motion;
        out.world[part] = out.world[parent] * local;
        for (int p = 0; p < n_params; ++p)
            out.dworld[part][p] = detail::diff_times_rigid(out.dworld[parent][p], local);

        // Own-scalar contributions: d(parent * origin * motion)/d(scalar).
        const int off = 9 + m.state_offset(e.index);
        const Eigen::Isometry3d pre = out.world[parent] * je.joint.origin;
        if (je.joint.kind != JointKind::prismatic) {
            // d(motion)/d(angle) = [axis]_x * rotation part; translation fixed.
            TransformDiff dm;
            dm.rot = skew(axis) * motion.linear();
            TransformDiff d = detail::rigid_times_diff(pre, dm);
            if (clamped_angle) d = {};
            out.dworld[part][off].rot += d.rot;
            out.dworld[part][off].trans += d.trans;
        }
        if (je.joint.kind != JointKind::revolute) {
            TransformDiff dm;
            dm.trans = axis;
            TransformDiff d = detail::rigid_times_diff(pre, dm);
            if (clamped_shift) d = {};
            const int slot = je.joint.kind == JointKind::revolute_prismatic ? off + 1 : off;
            out.dworld[part][slot].rot += d.rot;
            out.dworld[part][slot].trans += d.trans;
        }
    }
    return out;
}

// Structural checks: single tree rooted at `root`, valid part references, unit
// axes, ordered limits. Returns all problems found instead of throwing.
inline ValidationReport validate_model(const KinematicModel& m) {
    ValidationReport report;
    const int n = static_cast<int>(m.parts.size());
    if (n == 0) {
        report.issues.push_back("model has no parts");
        return report;
    }
    if (m.root < 0 || m.root >= n)
        report.issues.push_back("root part index out of range");

    for (std::size_t j = 0; j < m.joints.size(); ++j) {
        const JointEdge& e = m.joints[j];
        const std::string tag = "joint '" + e.name + "': ";
        if (e.parent < 0 || e.parent >= n)
            report.issues.push_back(tag + "parent part index out of range");
        if (e.child < 0 || e.child >= n)
            report.issues.push_back(tag + "child part index out of range");
        if (std::abs(e.joint.axis.norm() - 1.0) > 1e-6)
            report.issues.push_back(tag + "axis is not a unit vector");
        if (e.joint.angle_limits && e.joint.angle_limits->lower > e.joint.angle_limits->upper)
            report.issues.push_back(tag + "angle limits are inverted");
        if (e.joint.shift_limits && e.joint.shift_limits->lower > e.joint.shift_limits->upper)
            report.issues.push_back(tag + "shift limits are inverted");
        if (e.joint.kind == JointKind::revolute && e.joint.shift_limits)
            report.issues.push_back(tag + "revolute joint carries shift limits");
        if (e.joint.kind == JointKind::prismatic && e.joint.angle_limits)
            report.issues.push_back(tag + "prismatic joint carries angle limits");
    }
    for (std::size_t w = 0; w < m.welds.size(); ++w) {
        if (m.welds[w].parent < 0 || m.welds[w].parent >= n ||
            m.welds[w].child < 0 || m.welds[w].child >= n)
            report.issues.push_back("weld part index out of range");
    }
    if (!report.ok()) return report;

    try {
        std::vector<int> order;
        std::vector<detail::IncomingEdge> incoming;
        detail::topo_order(m, order, incoming);
    } catch (const TopologyError& err) {
        report.issues.push_back(err.what());
    }
    return report;
}

} // namespace artifit
