#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <deque>
#include <vector>

#include "artifit/detail/parallel.hpp"
#include "artifit/error.hpp"
#include "artifit/geometry.hpp"
#include "artifit/rotation.hpp"
#include "artifit/spatial.hpp"

namespace artifit {

// ---------------------------------------------------------------------------
// Spatial registration: plane-to-plane ICP with optional Anderson acceleration.
// ---------------------------------------------------------------------------

struct AlignConfig {
    int neighborhood = 20;   // points per local covariance estimate
    int max_iterations = 50;
    double tolerance = 1e-9; // infinity-norm of the transform update
    int anderson_memory = 5;
    bool anderson = true;
    // Smallest covariance eigenvalue is floored to this fraction of the
    // largest, turning razor-thin neighborhoods into usable plane models.
    double cov_epsilon = 1e-3;

    void validate() const {
        if (neighborhood < 4)
            throw ParameterError("covariance neighborhood must have at least 4 points");
        if (max_iterations < 1)
            throw ParameterError("iteration budget must be at least 1");
        if (!(tolerance > 0.0)) throw ParameterError("tolerance must be positive");
        if (anderson_memory < 1)
            throw ParameterError("acceleration memory must be at least 1");
        if (!(cov_epsilon > 0.0) || cov_epsilon >= 1.0)
            throw ParameterError("covariance floor must lie in (0, 1)");
    }
};

struct AlignmentResult {
    Eigen::Isometry3d transform = Eigen::Isometry3d::Identity();
    std::vector<double> residual_trace; // Mahalanobis cost at each iterate
    int iterations = 0;
    bool converged = false;
};

namespace detail {

// Plane-regularized covariance per point from its n nearest neighbors within
// the same cloud: eigenvalues below cov_epsilon times the largest are raised
// to that floor, so every matrix stays positive definite with a plane-like
// spectrum on flat neighborhoods.
inline std::vector<Eigen::Matrix3d> plane_covariances(const KdTree3& tree, int n,
                                                      double cov_epsilon) {
    std::vector<Eigen::Matrix3d> covs(tree.size());
    std::atomic<std::size_t> degenerate{0};
    parallel_chunks(tree.size(), 256, [&](std::size_t, std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const std::vector<int> idx =
                tree.knearest(tree.point(static_cast<int>(i)), n);
            Eigen::Vector3d mean = Eigen::Vector3d::Zero();
            for (const int j : idx) mean += tree.point(j);
            mean /= static_cast<double>(idx.size());
            Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
            for (const int j : idx) {
                const Eigen::Vector3d d = tree.point(j) - mean;
                cov += d * d.transpose();
            }
            cov /= static_cast<double>(idx.size());
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
            const Eigen::Vector3d lam = eig.eigenvalues();
            const double lam_max = lam.maxCoeff();
            if (!(lam_max > 1e-18)) {
                ++degenerate; // flagged after the parallel region
                covs[i] = Eigen::Matrix3d::Identity();
                continue;
            }
            const Eigen::Vector3d floored = lam.cwiseMax(cov_epsilon * lam_max);
            covs[i] = eig.eigenvectors() * floored.asDiagonal() *
                      eig.eigenvectors().transpose();
        }
    });
    if (degenerate > 0)
        throw DegenerateGeometryError(
            "point neighborhood has no spatial extent; covariance undefined");
    return covs;
}

// One sweep over the source cloud at transform (R, t): correspondences by
// nearest neighbor, Mahalanobis cost, and (optionally) the Gauss-Newton
// normal equations. Per-chunk partials are combined in chunk order so the
// result is identical under any worker count.
struct GicpPass {
    double cost = 0.0;
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
};

inline GicpPass gicp_pass(const std::vector<Eigen::Vector3d>& src,
                          const std::vector<Eigen::Matrix3d>& src_cov,
                          const KdTree3& tgt_tree,
                          const std::vector<Eigen::Matrix3d>& tgt_cov,
                          const Eigen::Matrix3d& rot, const Eigen::Vector3d& trans,
                          bool with_normal_equations) {
    constexpr std::size_t kChunk = 256;
    const std::size_t n_chunks = (src.size() + kChunk - 1) / kChunk;
    std::vector<GicpPass> partial(n_chunks);
    parallel_chunks(src.size(), kChunk, [&](std::size_t c, std::size_t lo, std::size_t hi) {
        GicpPass& acc = partial[c];
        for (std::size_t i = lo; i < hi; ++i) {
            const Eigen::Vector3d rp = rot * src[i];
            const Eigen::Vector3d p = rp + trans;
            const KdTree3::Hit hit = tgt_tree.nearest(p);
            const Eigen::Vector3d d = tgt_tree.point(hit.index) - p;
            const Eigen::Matrix3d m =
                tgt_cov[static_cast<std::size_t>(hit.index)] +
                rot * src_cov[i] * rot.transpose();
            const Eigen::Matrix3d w = m.inverse();
            acc.cost += d.dot(w * d);
            if (with_normal_equations) {
                Eigen::Matrix<double, 3, 6> jac;
                jac.leftCols<3>() = -skew(rp);
                jac.rightCols<3>() = Eigen::Matrix3d::Identity();
                const Eigen::Matrix<double, 6, 3> jw = jac.transpose() * w;
                acc.h += jw * jac;
                acc.g += jw * d;
            }
        }
    });
    GicpPass total;
    for (const GicpPass& p : partial) {
        total.cost += p.cost;
        total.h += p.h;
        total.g += p.g;
    }
    return total;
}

// Transform encoded as axis-angle plus translation; the fixed-point history
// for acceleration lives in this parameterization.
inline Eigen::Matrix<double, 6, 1> encode_se3(const Eigen::Matrix3d& rot,
                                              const Eigen::Vector3d& trans) {
    Eigen::Matrix<double, 6, 1> x;
    x.head<3>() = log_so3(rot);
    x.tail<3>() = trans;
    return x;
}

inline void decode_se3(const Eigen::Matrix<double, 6, 1>& x, Eigen::Matrix3d& rot,
                       Eigen::Vector3d& trans) {
    rot = exp_so3(x.head<3>());
    trans = x.tail<3>();
}

} // namespace detail

// Rigid alignment of source onto target by plane-to-plane matching: nearest
// correspondences, per-point plane-regularized covariances, and Gauss-Newton
// steps on the summed Mahalanobis distance, optionally extrapolated by
// Anderson acceleration over the recent transform history. The accelerated
// candidate is kept only when it does not increase the residual; otherwise
// the plain step proceeds and the history restarts.
inline AlignmentResult gicp_align(const PointSet& source, const PointSet& target,
                                  const AlignConfig& cfg = {}) {
    cfg.validate();
    if (source.points.empty() || target.points.empty())
        throw EmptyInputError("point clouds must be non-empty");
    if (source.points.size() < static_cast<std::size_t>(cfg.neighborhood) ||
        target.points.size() < static_cast<std::size_t>(cfg.neighborhood))
        throw ParameterError("point clouds must hold at least a full neighborhood");

    const KdTree3 src_tree(source.points);
    const KdTree3 tgt_tree(target.points);
    const std::vector<Eigen::Matrix3d> src_cov =
        detail::plane_covariances(src_tree, cfg.neighborhood, cfg.cov_epsilon);
    const std::vector<Eigen::Matrix3d> tgt_cov =
        detail::plane_covariances(tgt_tree, cfg.neighborhood, cfg.cov_epsilon);

    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    Eigen::Vector3d trans = Eigen::Vector3d::Zero();

    const auto cost_at = [&](const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
        return detail::gicp_pass(source.points, src_cov, tgt_tree, tgt_cov, r, t,
                                 false)
            .cost;
    };

    std::deque<Eigen::Matrix<double, 6, 1>> hist_x, hist_gx;
    AlignmentResult result;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
        const detail::GicpPass pass = detail::gicp_pass(
            source.points, src_cov, tgt_tree, tgt_cov, rot, trans, true);
        result.residual_trace.push_back(pass.cost);
        result.iterations = it;

        Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(pass.h);
        const double lam_max = eig.eigenvalues().maxCoeff();
        if (!(eig.eigenvalues().minCoeff() > 1e-12 * std::max(lam_max, 1.0)))
            throw DegenerateGeometryError(
                "normal equations are rank-deficient; geometry does not "
                "constrain all six degrees of freedom");
        const Eigen::Matrix<double, 6, 1> delta = pass.h.ldlt().solve(pass.g);

        if (delta.cwiseAbs().maxCoeff() <= cfg.tolerance) {
            result.converged = true;
            break;
        }

        // Plain fixed-point step: rotate about the target-frame origin.
        Eigen::Matrix3d rot_plain = exp_so3(delta.head<3>()) * rot;
        Eigen::Vector3d trans_plain = trans + delta.tail<3>();

        if (cfg.anderson) {
            const Eigen::Matrix<double, 6, 1> x = detail::encode_se3(rot, trans);
            const Eigen::Matrix<double, 6, 1> gx =
                detail::encode_se3(rot_plain, trans_plain);
            hist_x.push_back(x);
            hist_gx.push_back(gx);
            while (hist_x.size() > static_cast<std::size_t>(cfg.anderson_memory) + 1) {
                hist_x.pop_front();
                hist_gx.pop_front();
            }
            const std::size_t m = hist_x.size() - 1;
            if (m >= 1) {
                Eigen::MatrixXd df(6, m), dg(6, m);
                for (std::size_t j = 0; j < m; ++j) {
                    const Eigen::Matrix<double, 6, 1> fj1 =
                        hist_gx[j + 1] - hist_x[j + 1];
                    const Eigen::Matrix<double, 6, 1> fj = hist_gx[j] - hist_x[j];
                    df.col(static_cast<Eigen::Index>(j)) = fj1 - fj;
                    dg.col(static_cast<Eigen::Index>(j)) = hist_gx[j + 1] - hist_gx[j];
                }
                const Eigen::Matrix<double, 6, 1> fk = gx - x;
                const Eigen::VectorXd gamma = df.colPivHouseholderQr().solve(fk);
                if (gamma.allFinite()) {
                    const Eigen::Matrix<double, 6, 1> x_acc = gx - dg * gamma;
                    Eigen::Matrix3d rot_acc;
                    Eigen::Vector3d trans_acc;
                    detail::decode_se3(x_acc, rot_acc, trans_acc);
                    if (cost_at(rot_acc, trans_acc) <= cost_at(rot_plain, trans_plain)) {
                        rot = rot_acc;
                        trans = trans_acc;
                        continue;
                    }
                }
                // Rejected extrapolation: restart the history from scratch so
                // stale directions cannot poison later steps.
                hist_x.clear();
                hist_gx.clear();
            }
        }
        rot = rot_plain;
        trans = trans_plain;
    }

    result.transform.linear() = rot;
    result.transform.translation() = trans;
    return result;
}

// ---------------------------------------------------------------------------
// Temporal registration: time-lagged cross-correlation on first differences.
// ---------------------------------------------------------------------------

struct TlccResult {
    int lag = 0;        // frames by which b trails a
    double peak = 0.0;  // signed correlation at the returned lag
};

// Lag of sequence b relative to sequence a: both sequences are reduced to
// first differences, Pearson correlation is evaluated at every lag in
// [-max_lag, max_lag], and the argmax is returned. Ties prefer the smallest
// |lag|, then the negative one. With absolute_mode the argmax runs over
// |correlation| (for anti-correlated signals); the reported peak keeps its
// sign either way.
inline TlccResult tlcc_offset(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                              int max_lag, bool absolute_mode = false) {
    if (max_lag < 0) throw ParameterError("maximum lag must be non-negative");
    const Eigen::Index need = 2 * static_cast<Eigen::Index>(max_lag) + 2;
    if (a.size() <= need || b.size() <= need)
        throw ParameterError("sequences must be longer than twice the maximum lag plus two");

    const Eigen::VectorXd da = a.tail(a.size() - 1) - a.head(a.size() - 1);
    const Eigen::VectorXd db = b.tail(b.size() - 1) - b.head(b.size() - 1);
    const auto has_variance = [](const Eigen::VectorXd& d) {
        return (d.array() - d.mean()).abs().maxCoeff() > 0.0;
    };
    if (!has_variance(da) || !has_variance(db))
        throw UndefinedCorrelationError(
            "sequence is constant; correlation undefined after differencing");

    bool found = false;
    int best_lag = 0;
    double best_peak = 0.0, best_score = 0.0;
    for (int k = -max_lag; k <= max_lag; ++k) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, -k);
        const Eigen::Index hi = std::min<Eigen::Index>(da.size(), db.size() - k);
        const Eigen::Index m = hi - lo;
        if (m < 2) continue;
        const auto wa = da.segment(lo, m).array();
        const auto wb = db.segment(lo + k, m).array();
        const double ma = wa.mean(), mb = wb.mean();
        const double va = ((wa - ma) * (wa - ma)).sum();
        const double vb = ((wb - mb) * (wb - mb)).sum();
        if (!(va > 0.0) || !(vb > 0.0)) continue; // flat window at this lag
        const double corr = ((wa - ma) * (wb - mb)).sum() / std::sqrt(va * vb);
        const double score = absolute_mode ? std::abs(corr) : corr;
        const bool better =
            !found || score > best_score ||
            (score == best_score &&
             (std::abs(k) < std::abs(best_lag) ||
              (std::abs(k) == std::abs(best_lag) && k < best_lag)));
        if (better) {
            found = true;
            best_lag = k;
            best_peak = corr;
            best_score = score;
        }
    }
    if (!found)
        throw UndefinedCorrelationError("no lag admits a defined correlation");
    return {best_lag, best_peak};
}

struct TimeOffset {
    int lag = 0;                    // median of the per-signal lags
    std::vector<int> signal_lags;   // one entry per input signal pair
    std::vector<double> peaks;      // correlation at each signal's lag
};

// Shared lag between two multi-signal recordings (typically three joint
// heights): each signal pair votes through tlcc_offset and the median vote
// wins, so one corrupted signal cannot move the result. Even counts take the
// lower median, which is always a lag actually observed.
inline TimeOffset temporal_align(const std::vector<Eigen::VectorXd>& signals_a,
                                 const std::vector<Eigen::VectorXd>& signals_b,
                                 int max_lag, bool absolute_mode = false) {
    if (signals_a.size() != signals_b.size())
        throw ShapeError("recordings must hold the same number of signals");
    if (signals_a.empty()) throw EmptyInputError("no signals to align");

    TimeOffset out;
    for (std::size_t i = 0; i < signals_a.size(); ++i) {
        const TlccResult r =
            tlcc_offset(signals_a[i], signals_b[i], max_lag, absolute_mode);
        out.signal_lags.push_back(r.lag);
        out.peaks.push_back(r.peak);
    }
    std::vector<int> sorted = out.signal_lags;
    std::sort(sorted.begin(), sorted.end());
    out.lag = sorted[(sorted.size() - 1) / 2];
    return out;
}

} // namespace artifit
