#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cmath>

#include "artifit/error.hpp"

namespace artifit {

// Continuous 6-scalar rotation parameterization: two 3-vector column seeds,
// decoded to an orthonormal frame by Gram-Schmidt. Any pair of non-degenerate,
// non-parallel seeds decodes to a proper rotation, which keeps gradient descent
// over rotations free of chart singularities.
struct Rot6D {
    Eigen::Vector3d c1;
    Eigen::Vector3d c2;

    static Rot6D identity() { return {{1, 0, 0}, {0, 1, 0}}; }
};

namespace detail {
inline constexpr double kSeedEps = 1e-9;
}

// Decodes seeds to a rotation matrix. If `jac` is non-null it receives
// d(R)/d(seed k) for the six seed scalars, ordered c1.x c1.y c1.z c2.x c2.y c2.z.
inline Eigen::Matrix3d rot6d_to_matrix(const Rot6D& r,
                                       std::array<Eigen::Matrix3d, 6>* jac = nullptr) {
    const Eigen::Vector3d& c1 = r.c1;
    const Eigen::Vector3d& c2 = r.c2;
    const double n1 = c1.norm();
    if (n1 < detail::kSeedEps)
        throw InvalidRotationError("first rotation seed is numerically zero");
    const Eigen::Vector3d a1 = c1 / n1;

    const Eigen::Vector3d u = c2 - a1.dot(c2) * a1;
    const double nu = u.norm();
    if (c2.norm() < detail::kSeedEps || nu < detail::kSeedEps * c2.norm())
        throw InvalidRotationError("rotation seeds are parallel or second seed is zero");
    const Eigen::Vector3d a2 = u / nu;
    const Eigen::Vector3d a3 = a1.cross(a2);

    Eigen::Matrix3d R;
    R.col(0) = a1;
    R.col(1) = a2;
    R.col(2) = a3;

    if (jac) {
        const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
        const Eigen::Matrix3d J1 = (I - a1 * a1.transpose()) / n1; // da1/dc1
        const Eigen::Matrix3d Ju = (I - a2 * a2.transpose()) / nu; // da2/du
        const double d12 = a1.dot(c2);
        for (int k = 0; k < 6; ++k) {
            Eigen::Vector3d da1 = Eigen::Vector3d::Zero();
            Eigen::Vector3d du;
            if (k < 3) {
                da1 = J1.col(k);
                du = -(da1.dot(c2)) * a1 - d12 * da1;
            } else {
                Eigen::Vector3d e = Eigen::Vector3d::Zero();
                e[k - 3] = 1.0;
                du = e - a1[k - 3] * a1;
            }
            const Eigen::Vector3d da2 = Ju * du;
            const Eigen::Vector3d da3 = da1.cross(a2) + a1.cross(da2);
            (*jac)[k].col(0) = da1;
            (*jac)[k].col(1) = da2;
            (*jac)[k].col(2) = da3;
        }
    }
    return R;
}

// Encodes a rotation matrix as its first two columns. The input must be a
// proper rotation: orthonormal within 1e-6 and determinant +1.
inline Rot6D matrix_to_rot6d(const Eigen::Matrix3d& R) {
    const Eigen::Matrix3d err = R.transpose() * R - Eigen::Matrix3d::Identity();
    if (err.cwiseAbs().maxCoeff() > 1e-6)
        throw InvalidRotationError("matrix is not orthonormal");
    if (R.determinant() < 0.0)
        throw InvalidRotationError("matrix is a reflection, not a rotation");
    return {R.col(0), R.col(1)};
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0, -v.z(), v.y(),
         v.z(), 0, -v.x(),
         -v.y(), v.x(), 0;
    return m;
}

inline Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& axis, double angle) {
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

// Rotation vector (axis * angle) of the matrix exponential.
inline Eigen::Matrix3d exp_so3(const Eigen::Vector3d& w) {
    const double a = w.norm();
    if (a < 1e-12) {
        // Second-order expansion keeps the result a rotation to machine precision.
        const Eigen::Matrix3d W = skew(w);
        return Eigen::Matrix3d::Identity() + W + 0.5 * W * W;
    }
    return Eigen::AngleAxisd(a, w / a).toRotationMatrix();
}

inline Eigen::Vector3d log_so3(const Eigen::Matrix3d& R) {
    const Eigen::AngleAxisd aa(R);
    return aa.angle() * aa.axis();
}

// Partial derivatives of exp_so3(w) with respect to each component of w,
// via the compact closed form d exp / dw_k = ((w_k [w]x + [w x (I - R) e_k]x)
// / |w|^2) R, with the small-angle limit [e_k]x.
inline std::array<Eigen::Matrix3d, 3> exp_so3_derivatives(const Eigen::Vector3d& w) {
    const Eigen::Matrix3d R = exp_so3(w);
    std::array<Eigen::Matrix3d, 3> out;
    const double n2 = w.squaredNorm();
    for (int k = 0; k < 3; ++k) {
        const Eigen::Vector3d ek = Eigen::Vector3d::Unit(k);
        if (n2 < 1e-14) {
            out[k] = skew(ek) * R;
        } else {
            const Eigen::Vector3d v = w.cross((Eigen::Matrix3d::Identity() - R) * ek);
            out[k] = ((w[k] * skew(w) + skew(v)) / n2) * R;
        }
    }
    return out;
}

// Geodesic distance between two rotations, in radians.
inline double geodesic_angle(const Eigen::Matrix3d& Ra, const Eigen::Matrix3d& Rb) {
    const double c = ((Ra.transpose() * Rb).trace() - 1.0) * 0.5;
    return std::acos(std::clamp(c, -1.0, 1.0));
}

} // namespace artifit
