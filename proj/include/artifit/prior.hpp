#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "artifit/error.hpp"
#include "artifit/kinematics.hpp"
#include "artifit/rng.hpp"
#include "artifit/rotation.hpp"
#include "artifit/voxel.hpp"

namespace artifit {

// ---------------------------------------------------------------------------
// Training-loss formulas.
// ---------------------------------------------------------------------------

// Diagonal Gaussian over a latent code.
struct LatentGaussian {
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma;  // standard deviations, strictly positive

    void validate() const {
        if (mu.size() != sigma.size())
            throw ShapeError("latent mean and deviation sizes differ");
        for (Eigen::Index i = 0; i < sigma.size(); ++i)
            if (!(sigma[i] > 0.0))
                throw ParameterError("latent deviations must be positive");
    }
};

// KL divergence of a diagonal Gaussian from the standard normal:
// 1/2 sum_i (mu_i^2 + sigma_i^2 - 1 - ln sigma_i^2). Zero iff mu = 0, sigma = 1.
inline double loss_kl(const LatentGaussian& q) {
    q.validate();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < q.mu.size(); ++i) {
        const double m = q.mu[i], s = q.sigma[i];
        acc += m * m + s * s - 1.0 - 2.0 * std::log(s);
    }
    return 0.5 * acc;
}

// Mean over cells of the product of the two occupancies: the mass occupied by
// both grids at once. Symmetric; zero iff the supports are disjoint.
inline double loss_pene(const VoxelGrid& human, const VoxelGrid& object) {
    if (!(human.spec == object.spec))
        throw ShapeError("penetration loss needs identical grid specs");
    double acc = 0.0;
    for (std::size_t i = 0; i < human.values.size(); ++i)
        acc += static_cast<double>(human.values[i]) * object.values[i];
    return acc / static_cast<double>(human.spec.cell_count());
}

enum class ReconLoss { l1, bce };

// Reconstruction penalty between a predicted and a target occupancy grid.
// l1 is the mean absolute difference; bce treats each cell as an independent
// Bernoulli with predictions clamped away from {0, 1}.
inline double loss_recon(const VoxelGrid& pred, const VoxelGrid& target,
                         ReconLoss mode = ReconLoss::l1) {
    if (!(pred.spec == target.spec))
        throw ShapeError("reconstruction loss needs identical grid specs");
    const double n = static_cast<double>(pred.spec.cell_count());
    double acc = 0.0;
    if (mode == ReconLoss::l1) {
        for (std::size_t i = 0; i < pred.values.size(); ++i)
            acc += std::abs(static_cast<double>(pred.values[i]) - target.values[i]);
    } else {
        constexpr double eps = 1e-7;
        for (std::size_t i = 0; i < pred.values.size(); ++i) {
            const double p =
                std::clamp(static_cast<double>(pred.values[i]), eps, 1.0 - eps);
            const double t = target.values[i];
            acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        }
    }
    return acc / n;
}

// Hinge that pushes perturbed (negative) samples to larger latent norms than
// their positive counterparts.
inline double loss_contrastive(double pos_norm, double neg_norm) {
    return std::max(0.0, pos_norm - neg_norm);
}

struct PriorLossWeights {
    double recon = 1.0;
    double kl = 1.0;
    double pene = 1.0;
    double contrastive = 1.0;
};

// The combined training objective is the exact weighted sum of the four terms.
inline double prior_training_loss(double recon, double kl, double pene,
                                  double contrastive,
                                  const PriorLossWeights& w = {}) {
    return w.recon * recon + w.kl * kl + w.pene * pene + w.contrastive * contrastive;
}

// ---------------------------------------------------------------------------
// Negative-sample perturbation.
// ---------------------------------------------------------------------------

struct PerturbBounds {
    double rot_deg = 15.0;     // max root rotation angle, degrees
    double transl_mm = 100.0;  // max root translation magnitude, millimeters
    double joint = 0.3;        // max per-scalar joint offset, radians or meters
};

// Uniform noise within the bounds: a random-axis rotation with angle uniform
// in [0, rot_deg], a random-direction translation with magnitude uniform in
// [0, transl_mm], and an independent uniform offset per joint scalar.
// Deterministic per seed; zero bounds return the pose unchanged.
inline ObjectPose perturb_object(const KinematicModel& model, const ObjectPose& pose,
                                 const PerturbBounds& b, std::uint64_t seed) {
    if (b.rot_deg < 0.0 || b.transl_mm < 0.0 || b.joint < 0.0)
        throw ParameterError("perturbation bounds must be non-negative");
    if (static_cast<int>(pose.joints.size()) != model.state_size())
        throw ShapeError("joint state size does not match the model");

    Rng rng(seed);
    ObjectPose out = pose;

    const Eigen::Vector3d axis = rng.unit_vector();
    const double angle = rng.uniform(0.0, b.rot_deg * std::numbers::pi / 180.0);
    if (angle != 0.0)
        out.root.rotation = matrix_to_rot6d(exp_so3(angle * axis) *
                                            rot6d_to_matrix(pose.root.rotation));

    const Eigen::Vector3d dir = rng.unit_vector();
    const double mag = rng.uniform(0.0, b.transl_mm / 1000.0);
    out.root.translation += mag * dir;

    for (double& s : out.joints) s += rng.uniform(-b.joint, b.joint);
    return out;
}

// ---------------------------------------------------------------------------
// Interaction encoder.
// ---------------------------------------------------------------------------

// Standardization fitted on positive (reference) configurations: per-feature
// means and deviation scales. A feature that barely varies across the
// reference set carries no signal, so its scale is floored at a minimum
// believable deviation rather than letting a near-zero denominator amplify
// measurement noise into enormous standardized coordinates and gradients.
struct ReferenceStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;
    int sample_count = 0;

    static constexpr double kScaleFloor = 1e-3;

    void validate(int dim) const {
        if (mean.size() != dim || scale.size() != dim)
            throw ShapeError("reference statistics dimension mismatch");
        for (Eigen::Index i = 0; i < scale.size(); ++i)
            if (!(scale[i] > 0.0))
                throw ParameterError("reference scales must be positive");
    }

    static ReferenceStats fit(const std::vector<Eigen::VectorXd>& samples) {
        if (samples.empty())
            throw EmptyInputError("reference statistics need at least one sample");
        const Eigen::Index dim = samples.front().size();
        for (const auto& s : samples)
            if (s.size() != dim)
                throw ShapeError("reference samples must share one dimension");
        ReferenceStats out;
        out.sample_count = static_cast<int>(samples.size());
        out.mean = Eigen::VectorXd::Zero(dim);
        for (const auto& s : samples) out.mean += s;
        out.mean /= static_cast<double>(samples.size());
        Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
        for (const auto& s : samples) var += (s - out.mean).cwiseAbs2();
        var /= static_cast<double>(samples.size());
        out.scale = var.cwiseSqrt().cwiseMax(kScaleFloor);
        return out;
    }
};

// Maps a (human pyramid, object grid) pair to a latent vector whose norm
// measures interaction implausibility. Implementations must be deterministic
// with finite output.
class PriorEncoder {
public:
    virtual ~PriorEncoder() = default;
    virtual int latent_dimension() const = 0;
    virtual Eigen::VectorXd encode(const MultiResVoxel& human,
                                   const VoxelGrid& object) const = 0;

    // True when encode_adjoint is implemented in closed form.
    virtual bool provides_adjoint() const { return false; }

    // Accumulates d(dlatent . latent)/d(object cell) into cell_adjoint.
    virtual void encode_adjoint(const MultiResVoxel& /*human*/,
                                const VoxelGrid& /*object*/,
                                const Eigen::VectorXd& /*dlatent*/,
                                std::vector<float>& /*cell_adjoint*/) const {
        throw ParameterError("this encoder does not provide derivatives");
    }
};

struct AnalyticOptions {
    // Distance between the grids' nearest occupied cells that counts as ideal
    // contact; the proximity feature is signed around it.
    double contact_target_m = 0.02;
    // Sharpness of the occupancy-weighted soft minimum distance, in cells:
    // the effective exponent rate is softmin_cells / mean cell edge.
    double softmin_cells = 4.0;
};

inline const std::array<const char*, 8>& analytic_feature_names() {
    static const std::array<const char*, 8> names = {
        "overlap_mass",  "proximity_softmin", "mean_distance", "centroid_dx",
        "centroid_dy",   "centroid_dz",       "fill_fraction", "spread"};
    return names;
}

namespace detail {

// One pass of the lower envelope of parabolas f(p) + w (q - p)^2 over integer
// positions: the separable squared-distance transform along a single axis.
inline void parabola_envelope(const std::vector<double>& f, std::vector<double>& d,
                              int n, double w, std::vector<int>& v,
                              std::vector<double>& z) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    v.assign(static_cast<std::size_t>(n), 0);
    z.assign(static_cast<std::size_t>(n) + 1, 0.0);
    int k = 0;
    z[0] = -inf;
    z[1] = inf;
    for (int q = 1; q < n; ++q) {
        double s = 0.0;
        while (true) {
            const int p = v[k];
            s = ((f[q] + w * q * q) - (f[p] + w * p * p)) /
                (2.0 * w * (q - p));
            if (s <= z[k]) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const int p = v[k];
        d[q] = f[p] + w * (q - p) * (q - p);
    }
}

// Squared Euclidean distance in m^2 from every cell center to the nearest
// cell whose occupancy exceeds the threshold. Seeds use a large finite value
// instead of infinity so the envelope arithmetic stays well defined.
inline std::vector<double> squared_distance_field(const VoxelGrid& g,
                                                  float threshold) {
    const int nx = g.spec.resolution.x();
    const int ny = g.spec.resolution.y();
    const int nz = g.spec.resolution.z();
    const Eigen::Vector3d cs = g.spec.cell_size();

    std::vector<double> dist(g.values.size());
    for (std::size_t i = 0; i < dist.size(); ++i)
        dist[i] = g.values[i] > threshold ? 0.0 : 1e30;

    const int nmax = std::max({nx, ny, nz});
    std::vector<double> f(static_cast<std::size_t>(nmax));
    std::vector<double> dcol(static_cast<std::size_t>(nmax));
    std::vector<int> v;
    std::vector<double> z;

    // Along z (contiguous), then y, then x.
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy) {
            const std::size_t base =
                (static_cast<std::size_t>(ix) * ny + iy) * nz;
            for (int iz = 0; iz < nz; ++iz) f[iz] = dist[base + iz];
            parabola_envelope(f, dcol, nz, cs.z() * cs.z(), v, z);
            for (int iz = 0; iz < nz; ++iz) dist[base + iz] = dcol[iz];
        }
    for (int ix = 0; ix < nx; ++ix)
        for (int iz = 0; iz < nz; ++iz) {
            for (int iy = 0; iy < ny; ++iy)
                f[iy] = dist[(static_cast<std::size_t>(ix) * ny + iy) * nz + iz];
            parabola_envelope(f, dcol, ny, cs.y() * cs.y(), v, z);
            for (int iy = 0; iy < ny; ++iy)
                dist[(static_cast<std::size_t>(ix) * ny + iy) * nz + iz] = dcol[iy];
        }
    for (int iy = 0; iy < ny; ++iy)
        for (int iz = 0; iz < nz; ++iz) {
            for (int ix = 0; ix < nx; ++ix)
                f[ix] = dist[(static_cast<std::size_t>(ix) * ny + iy) * nz + iz];
            parabola_envelope(f, dcol, nx, cs.x() * cs.x(), v, z);
            for (int ix = 0; ix < nx; ++ix)
                dist[(static_cast<std::size_t>(ix) * ny + iy) * nz + iz] = dcol[ix];
        }
    return dist;
}

struct HumanField {
    std::vector<float> dist_m;  // distance to the nearest occupied human cell
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
};

inline HumanField build_human_field(const VoxelGrid& level) {
    double mass = 0.0;
    Eigen::Vector3d moment = Eigen::Vector3d::Zero();
    const int nx = level.spec.resolution.x();
    const int ny = level.spec.resolution.y();
    const int nz = level.spec.resolution.z();
    std::size_t idx = 0;
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy)
            for (int iz = 0; iz < nz; ++iz, ++idx) {
                const double h = level.values[idx];
                if (h > 0.0) {
                    mass += h;
                    moment += h * level.spec.cell_center(ix, iy, iz);
                }
            }
    if (!(mass > 0.0)) throw EmptyInputError("human occupancy grid is empty");

    HumanField out;
    out.centroid = moment / mass;
    const std::vector<double> d2 = squared_distance_field(level, 0.5f);
    out.dist_m.resize(d2.size());
    for (std::size_t i = 0; i < d2.size(); ++i)
        out.dist_m[i] = static_cast<float>(std::sqrt(d2[i]));
    return out;
}

inline int matched_level(const MultiResVoxel& human, const GridSpec& spec) {
    for (int l = 0; l < 4; ++l)
        if (human.levels[l].spec == spec) return l;
    throw ShapeError("object grid spec matches no human pyramid level");
}

// All per-configuration sums the features and their adjoints are built from.
struct FeatureTerms {
    double total = 0.0;       // total object occupancy S
    double overlap = 0.0;     // mean over cells of h * o
    double dmin = 0.0;        // min distance over occupied object cells
    double sbar = 0.0;        // occupancy-weighted mean of exp(-k (d - dmin))
    double mean_dist = 0.0;   // occupancy-weighted mean distance
    double m2 = 0.0;          // occupancy-weighted second moment about g
    double sharpness = 0.0;   // exponent rate k, 1/m
    Eigen::Vector3d obj_centroid = Eigen::Vector3d::Zero();
    Eigen::VectorXd raw;      // the 8 raw features
};

inline FeatureTerms interaction_feature_terms(const VoxelGrid& object,
                                              const VoxelGrid& human_level,
                                              const std::vector<float>& dist_m,
                                              const Eigen::Vector3d& human_centroid,
                                              const AnalyticOptions& opts) {
    const int nx = object.spec.resolution.x();
    const int ny = object.spec.resolution.y();
    const int nz = object.spec.resolution.z();
    const double n = static_cast<double>(object.spec.cell_count());

    FeatureTerms t;
    t.dmin = 1e30;
    Eigen::Vector3d moment = Eigen::Vector3d::Zero();
    std::size_t idx = 0;
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy)
            for (int iz = 0; iz < nz; ++iz, ++idx) {
                const double o = object.values[idx];
                if (o == 0.0) continue;
                t.total += o;
                moment += o * object.spec.cell_center(ix, iy, iz);
                t.overlap += o * human_level.values[idx];
                t.dmin = std::min(t.dmin, static_cast<double>(dist_m[idx]));
            }
    if (!(t.total > 0.0)) throw EmptyInputError("encode of an empty object grid");
    t.obj_centroid = moment / t.total;
    t.overlap /= n;
    t.sharpness = opts.softmin_cells / object.spec.cell_size().mean();

    double sbar_num = 0.0, dist_num = 0.0, m2_num = 0.0;
    idx = 0;
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy)
            for (int iz = 0; iz < nz; ++iz, ++idx) {
                const double o = object.values[idx];
                if (o == 0.0) continue;
                const double d = dist_m[idx];
                sbar_num += o * std::exp(-t.sharpness * (d - t.dmin));
                dist_num += o * d;
                m2_num += o * (object.spec.cell_center(ix, iy, iz) - t.obj_centroid)
                                  .squaredNorm();
            }
    t.sbar = sbar_num / t.total;
    t.mean_dist = dist_num / t.total;
    t.m2 = m2_num / t.total;

    t.raw = Eigen::VectorXd(8);
    t.raw[0] = t.overlap;
    t.raw[1] = t.dmin - std::log(t.sbar) / t.sharpness - opts.contact_target_m;
    t.raw[2] = t.mean_dist;
    t.raw.segment<3>(3) = t.obj_centroid - human_centroid;
    t.raw[6] = t.total / n;
    t.raw[7] = std::sqrt(t.m2 + 1e-18);
    return t;
}

// Accumulates d(draw . raw_features)/d(object cell) into adj for every cell.
inline void accumulate_interaction_adjoint(const VoxelGrid& object,
                                           const VoxelGrid& human_level,
                                           const std::vector<float>& dist_m,
                                           const FeatureTerms& t,
                                           const Eigen::VectorXd& draw,
                                           std::vector<float>& adj) {
    const int nx = object.spec.resolution.x();
    const int ny = object.spec.resolution.y();
    const int nz = object.spec.resolution.z();
    const double n = static_cast<double>(object.spec.cell_count());
    const double inv_s = 1.0 / t.total;
    const double spread = t.raw[7];

    std::size_t idx = 0;
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy)
            for (int iz = 0; iz < nz; ++iz, ++idx) {
                const double d = dist_m[idx];
                const Eigen::Vector3d x = object.spec.cell_center(ix, iy, iz);
                const Eigen::Vector3d dx = x - t.obj_centroid;
                const double e = std::exp(-t.sharpness * (d - t.dmin));
                double g = draw[0] * human_level.values[idx] / n;
                g += draw[1] * (1.0 - e / t.sbar) / (t.sharpness * t.total);
                g += draw[2] * (d - t.mean_dist) * inv_s;
                g += (draw[3] * dx.x() + draw[4] * dx.y() + draw[5] * dx.z()) * inv_s;
                g += draw[6] / n;
                g += draw[7] * (dx.squaredNorm() - t.m2) / (2.0 * spread) * inv_s;
                adj[idx] += static_cast<float>(g);
            }
}

} // namespace detail

// Raw (un-standardized) interaction features of an object grid against the
// human pyramid level with the matching spec:
//   [0] overlap mass (mean over cells of the occupancy product)
//   [1] signed softmin distance to the human minus the contact target
//   [2] occupancy-weighted mean distance to the human
//   [3..5] object centroid minus human centroid, per axis
//   [6] object fill fraction
//   [7] object spatial spread about its own centroid
inline Eigen::VectorXd interaction_features(const MultiResVoxel& human,
                                            const VoxelGrid& object,
                                            const AnalyticOptions& opts = {}) {
    const VoxelGrid& level = human.levels[detail::matched_level(human, object.spec)];
    const detail::HumanField field = detail::build_human_field(level);
    return detail::interaction_feature_terms(object, level, field.dist_m,
                                             field.centroid, opts)
        .raw;
}

// Interaction features standardized by the reference statistics: zero when a
// configuration matches the reference means exactly; the norm grows with
// overlap mass and with separation from the contact band.
inline Eigen::VectorXd encode_analytic(const MultiResVoxel& human,
                                       const VoxelGrid& object,
                                       const ReferenceStats& stats,
                                       const AnalyticOptions& opts = {}) {
    stats.validate(8);
    return (interaction_features(human, object, opts) - stats.mean)
        .cwiseQuotient(stats.scale);
}

// Closed-form encoder over the analytic interaction features, with the
// human distance field cached between calls (the human is typically fixed
// while the object moves).
class AnalyticEncoder final : public PriorEncoder {
public:
    explicit AnalyticEncoder(ReferenceStats stats, AnalyticOptions opts = {})
        : stats_(std::move(stats)), opts_(opts) {
        stats_.validate(8);
    }

    int latent_dimension() const override { return 8; }

    const ReferenceStats& stats() const { return stats_; }
    const AnalyticOptions& options() const { return opts_; }

    Eigen::VectorXd encode(const MultiResVoxel& human,
                           const VoxelGrid& object) const override {
        const VoxelGrid& level =
            human.levels[detail::matched_level(human, object.spec)];
        const std::shared_ptr<const Cached> c = field(level);
        const detail::FeatureTerms t = detail::interaction_feature_terms(
            object, level, c->field.dist_m, c->field.centroid, opts_);
        return (t.raw - stats_.mean).cwiseQuotient(stats_.scale);
    }

    bool provides_adjoint() const override { return true; }

    void encode_adjoint(const MultiResVoxel& human, const VoxelGrid& object,
                        const Eigen::VectorXd& dlatent,
                        std::vector<float>& cell_adjoint) const override {
        if (dlatent.size() != 8)
            throw ShapeError("latent adjoint must have 8 entries");
        if (cell_adjoint.size() != object.values.size())
            throw ShapeError("cell adjoint size does not match the object grid");
        const VoxelGrid& level =
            human.levels[detail::matched_level(human, object.spec)];
        const std::shared_ptr<const Cached> c = field(level);
        const detail::FeatureTerms t = detail::interaction_feature_terms(
            object, level, c->field.dist_m, c->field.centroid, opts_);
        const Eigen::VectorXd draw = dlatent.cwiseQuotient(stats_.scale);
        detail::accumulate_interaction_adjoint(object, level, c->field.dist_m, t,
                                               draw, cell_adjoint);
    }

private:
    struct Cached {
        GridSpec spec;
        std::vector<float> occupancy;
        detail::HumanField field;
    };

    std::shared_ptr<const Cached> field(const VoxelGrid& level) const {
        std::lock_guard<std::mutex> lock(mutex_);
        if (cache_ && cache_->spec == level.spec &&
            cache_->occupancy == level.values)
            return cache_;
        auto fresh = std::make_shared<Cached>();
        fresh->spec = level.spec;
        fresh->occupancy = level.values;
        fresh->field = detail::build_human_field(level);
        cache_ = fresh;
        return cache_;
    }

    ReferenceStats stats_;
    AnalyticOptions opts_;
    mutable std::mutex mutex_;
    mutable std::shared_ptr<const Cached> cache_;
};

} // namespace artifit
