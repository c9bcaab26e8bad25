#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <utility>
#include <vector>

#include "artifit/detail/parallel.hpp"
#include "artifit/error.hpp"
#include "artifit/kinematics.hpp"
#include "artifit/voxel.hpp"

namespace artifit {

struct ResampleResult {
    VoxelGrid grid;
    std::vector<int> argmax_part;  // source part chosen per output cell
};

// Differentiable occupancy resampling under an articulated pose.
//
// Each part carries an occupancy grid captured in the model's rest
// configuration (identity root, zero joint state). Posing the model moves part
// i by Psi_i = World_i * Rest_i^-1; an output cell at world position x reads
// part i at the pulled-back point y = Psi_i^-1 x via trilinear interpolation
// (zero outside the source grid). Cells combine across parts by maximum, ties
// resolved to the lowest part index.
//
// forward() caches everything backward() needs; backward() folds a per-cell
// adjoint (dObjective/dcell) into a gradient over the packed parameter vector
// [c1(3), c2(3), translation(3), joint scalars...], differentiating through
// the rotation decode, the kinematic chain, and the interpolation. Gradients
// flow through the argmax part only, and clamped joint scalars contribute
// zero, matching the subgradient the optimizer follows.
class TransformedResampler {
  public:
    TransformedResampler(KinematicModel model, std::vector<VoxelGrid> part_grids,
                         GridSpec out_spec)
        : model_(std::move(model)), parts_(std::move(part_grids)),
          out_spec_(out_spec) {
        out_spec_.validate();
        if (parts_.size() != model_.parts.size())
            throw ShapeError("one source grid per part required");
        for (const auto& g : parts_) {
            g.spec.validate();
            if (g.values.size() != g.spec.cell_count())
                throw ShapeError("source grid payload does not match its spec");
        }
        for (const auto& rest : rest_transforms(model_))
            rest_inv_.push_back(rest.inverse());
        n_params_ = 9 + static_cast<int>(model_.state_size());
    }

    int parameter_count() const { return n_params_; }
    const GridSpec& output_spec() const { return out_spec_; }
    const KinematicModel& model() const { return model_; }

    static Eigen::VectorXd pack(const Rot6D& rot, const Eigen::Vector3d& translation,
                                const JointState& state) {
        Eigen::VectorXd p(9 + state.size());
        p.segment<3>(0) = rot.c1;
        p.segment<3>(3) = rot.c2;
        p.segment<3>(6) = translation;
        for (std::size_t i = 0; i < state.size(); ++i)
            p[9 + static_cast<int>(i)] = state[i];
        return p;
    }

    static void unpack(const Eigen::VectorXd& p, Rot6D* rot,
                       Eigen::Vector3d* translation, JointState* state) {
        if (p.size() < 9) throw ShapeError("parameter vector needs at least 9 entries");
        rot->c1 = p.segment<3>(0);
        rot->c2 = p.segment<3>(3);
        *translation = p.segment<3>(6);
        state->assign(p.data() + 9, p.data() + p.size());
    }

    // Poses the model and resamples every output cell. The returned grid and
    // the cached derivative state stay valid until the next forward() call.
    const VoxelGrid& forward(const Eigen::VectorXd& params,
                             LimitMode mode = LimitMode::clamp) {
        if (params.size() != n_params_)
            throw ShapeError("parameter vector has wrong size");
        Rot6D rot;
        Eigen::Vector3d t;
        JointState state;
        unpack(params, &rot, &t, &state);
        fkd_ = forward_kinematics_with_jacobian(model_, rot, t, state, mode);

        const int n_parts = static_cast<int>(parts_.size());
        pull_rot_.resize(n_parts);
        pull_off_.resize(n_parts);
        psi_t_.resize(n_parts);
        dpsi_rot_.assign(n_parts, std::vector<Eigen::Matrix3d>(n_params_));
        dpsi_pulled_t_.assign(n_parts, std::vector<Eigen::Vector3d>(n_params_));
        for (int i = 0; i < n_parts; ++i) {
            const Eigen::Isometry3d psi = fkd_.world[i] * rest_inv_[i];
            const Eigen::Matrix3d rot_t = psi.linear().transpose();
            pull_rot_[i] = rot_t;
            psi_t_[i] = psi.translation();
            pull_off_[i] = rot_t * psi.translation();
            for (int p = 0; p < n_params_; ++p) {
                const TransformDiff d =
                    detail::diff_times_rigid(fkd_.dworld[i][p], rest_inv_[i]);
                dpsi_rot_[i][p] = d.rot;
                dpsi_pulled_t_[i][p] = rot_t * d.trans;
            }
        }

        grid_ = VoxelGrid(out_spec_);
        argmax_.assign(out_spec_.cell_count(), 0);
        const Eigen::Vector3i n = out_spec_.resolution;
        detail::parallel_chunks(
            out_spec_.cell_count(), 4096,
            [&](std::size_t, std::size_t begin, std::size_t end) {
                for (std::size_t c = begin; c < end; ++c) {
                    const int iz = static_cast<int>(c % n.z());
                    const int iy = static_cast<int>((c / n.z()) % n.y());
                    const int ix = static_cast<int>(c / (n.z() * n.y()));
                    const Eigen::Vector3d x = out_spec_.cell_center(ix, iy, iz);
                    double best = -1.0;
                    int best_part = 0;
                    for (int i = 0; i < n_parts; ++i) {
                        const Eigen::Vector3d y = pull_rot_[i] * x - pull_off_[i];
                        const double v = sample_trilinear(parts_[i], y);
                        if (v > best) {
                            best = v;
                            best_part = i;
                        }
                    }
                    grid_.values[c] = static_cast<float>(best);
                    argmax_[c] = best_part;
                }
            });
        has_state_ = true;
        return grid_;
    }

    const VoxelGrid& grid() const { return grid_; }
    const std::vector<int>& argmax_part() const { return argmax_; }

    // Folds dObjective/dcell into dObjective/dparams using the state cached by
    // the latest forward(). Deterministic under any thread count: per-cell
    // contributions are reduced within fixed chunks, then chunks combine in
    // index order.
    Eigen::VectorXd backward(const std::vector<float>& cell_adjoint) const {
        if (!has_state_) throw ShapeError("backward() requires a prior forward()");
        if (cell_adjoint.size() != out_spec_.cell_count())
            throw ShapeError("adjoint size does not match the output grid");
        const int n_parts = static_cast<int>(parts_.size());
        const Eigen::Vector3i n = out_spec_.resolution;

        struct Accum {
            std::vector<Eigen::Matrix3d> a;
            std::vector<Eigen::Vector3d> b;
        };
        const std::size_t cells = out_spec_.cell_count();
        const std::size_t chunk = 4096;
        const std::size_t n_chunks = (cells + chunk - 1) / chunk;
        std::vector<Accum> partial(n_chunks);
        detail::parallel_chunks(
            cells, chunk, [&](std::size_t ci, std::size_t begin, std::size_t end) {
                Accum& acc = partial[ci];
                acc.a.assign(n_parts, Eigen::Matrix3d::Zero());
                acc.b.assign(n_parts, Eigen::Vector3d::Zero());
                for (std::size_t c = begin; c < end; ++c) {
                    const double d = cell_adjoint[c];
                    if (d == 0.0) continue;
                    const int iz = static_cast<int>(c % n.z());
                    const int iy = static_cast<int>((c / n.z()) % n.y());
                    const int ix = static_cast<int>(c / (n.z() * n.y()));
                    const Eigen::Vector3d x = out_spec_.cell_center(ix, iy, iz);
                    const int i = argmax_[c];
                    const Eigen::Vector3d y = pull_rot_[i] * x - pull_off_[i];
                    Eigen::Vector3d g;
                    sample_trilinear(parts_[i], y, &g);
                    const Eigen::Vector3d r = x - psi_t_[i];
                    acc.a[i].noalias() += d * (r * g.transpose());
                    acc.b[i] += d * g;
                }
            });

        std::vector<Eigen::Matrix3d> a(n_parts, Eigen::Matrix3d::Zero());
        std::vector<Eigen::Vector3d> b(n_parts, Eigen::Vector3d::Zero());
        for (const Accum& acc : partial)
            for (int i = 0; i < n_parts; ++i) {
                a[i] += acc.a[i];
                b[i] += acc.b[i];
            }

        // d(cell)/dp = g . (dPsi_rot^T r - Psi_rot^T dPsi_t) summed over cells
        // collapses to Frobenius products against the per-part accumulators.
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_params_);
        for (int i = 0; i < n_parts; ++i)
            for (int p = 0; p < n_params_; ++p)
                grad[p] += dpsi_rot_[i][p].cwiseProduct(a[i]).sum() -
                           dpsi_pulled_t_[i][p].dot(b[i]);
        return grad;
    }

    // Independent single-cell evaluation used by finite-difference probes.
    // Recomputes the kinematics from scratch; shares no cached state.
    double cell_value(const Eigen::VectorXd& params, const Eigen::Vector3i& cell,
                      LimitMode mode = LimitMode::clamp) const {
        if (params.size() != n_params_)
            throw ShapeError("parameter vector has wrong size");
        Rot6D rot;
        Eigen::Vector3d t;
        JointState state;
        unpack(params, &rot, &t, &state);
        Eigen::Isometry3d root = Eigen::Isometry3d::Identity();
        root.linear() = rot6d_to_matrix(rot);
        root.translation() = t;
        const std::vector<Eigen::Isometry3d> world =
            fk_transforms(model_, root, state, mode);
        const Eigen::Vector3d x =
            out_spec_.cell_center(cell.x(), cell.y(), cell.z());
        double best = -1.0;
        for (std::size_t i = 0; i < parts_.size(); ++i) {
            const Eigen::Isometry3d psi = world[i] * rest_inv_[i];
            const Eigen::Vector3d y = psi.linear().transpose() * (x - psi.translation());
            best = std::max(best, sample_trilinear(parts_[i], y));
        }
        return best;
    }

    // Margin diagnostics for probe-cell selection: distance of the pulled-back
    // point from the interpolation lattice planes of the argmax source (in
    // cells, 0 = on a plane) and the value gap to the runner-up part.
    struct CellSmoothness {
        double lattice_margin;
        double tie_margin;
    };
    CellSmoothness cell_smoothness(std::int64_t flat_index) const {
        if (!has_state_) throw ShapeError("cell_smoothness() requires forward()");
        const Eigen::Vector3i n = out_spec_.resolution;
        const int iz = static_cast<int>(flat_index % n.z());
        const int iy = static_cast<int>((flat_index / n.z()) % n.y());
        const int ix = static_cast<int>(flat_index / (n.z() * n.y()));
        const Eigen::Vector3d x = out_spec_.cell_center(ix, iy, iz);
        const int i = argmax_[flat_index];
        const Eigen::Vector3d y = pull_rot_[i] * x - pull_off_[i];
        const GridSpec& s = parts_[i].spec;
        const Eigen::Vector3d cs = s.cell_size();
        double lattice = 1.0;
        for (int d = 0; d < 3; ++d) {
            const double u = (y[d] - s.origin[d]) / cs[d] - 0.5;
            lattice = std::min(lattice, std::abs(u - std::round(u)));
        }
        double runner_up = -1.0;
        for (int j = 0; j < static_cast<int>(parts_.size()); ++j) {
            if (j == i) continue;
            const Eigen::Vector3d yj = pull_rot_[j] * x - pull_off_[j];
            runner_up = std::max(runner_up, sample_trilinear(parts_[j], yj));
        }
        const double tie = parts_.size() == 1
                               ? 1.0
                               : grid_.values[flat_index] - runner_up;
        return {lattice, tie};
    }

  private:
    KinematicModel model_;
    std::vector<VoxelGrid> parts_;
    GridSpec out_spec_;
    std::vector<Eigen::Isometry3d> rest_inv_;
    int n_params_ = 0;

    // State cached by forward() for backward().
    bool has_state_ = false;
    FkDerivatives fkd_;
    std::vector<Eigen::Matrix3d> pull_rot_;              // Psi_rot^T
    std::vector<Eigen::Vector3d> pull_off_;              // Psi_rot^T * Psi_t
    std::vector<Eigen::Vector3d> psi_t_;
    std::vector<std::vector<Eigen::Matrix3d>> dpsi_rot_;  // per part, per param
    std::vector<std::vector<Eigen::Vector3d>> dpsi_pulled_t_;
    VoxelGrid grid_{GridSpec{Eigen::Vector3i::Ones(), Eigen::Vector3d::Zero(),
                             Eigen::Vector3d::Ones()}};
    std::vector<int> argmax_;
};

// One-shot convenience wrapper around the engine's forward pass.
inline ResampleResult resample_transformed(const KinematicModel& model,
                                           std::vector<VoxelGrid> part_grids,
                                           const PartPose& root,
                                           const JointState& state,
                                           const GridSpec& out_spec,
                                           LimitMode mode = LimitMode::clamp) {
    TransformedResampler engine(model, std::move(part_grids), out_spec);
    engine.forward(
        TransformedResampler::pack(root.rotation, root.translation, state), mode);
    return {engine.grid(), engine.argmax_part()};
}

} // namespace artifit
