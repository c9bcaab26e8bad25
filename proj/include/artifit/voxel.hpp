#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "artifit/detail/parallel.hpp"
#include "artifit/error.hpp"
#include "artifit/geometry.hpp"

namespace artifit {

// Axis-aligned sampling lattice. Cells are addressed x-major with z fastest;
// occupancy samples live at cell centers.
struct GridSpec {
    Eigen::Vector3i resolution = {0, 0, 0};
    Eigen::Vector3d origin = Eigen::Vector3d::Zero(); // min corner, meters
    Eigen::Vector3d extent = Eigen::Vector3d::Zero(); // full size, meters

    void validate() const {
        for (int k = 0; k < 3; ++k) {
            if (resolution[k] < 1) throw ParameterError("grid resolution must be >= 1");
            if (!(extent[k] > 0.0)) throw ParameterError("grid extent must be positive");
        }
    }

    Eigen::Vector3d cell_size() const {
        return extent.cwiseQuotient(resolution.cast<double>());
    }

    Eigen::Vector3d cell_center(int ix, int iy, int iz) const {
        const Eigen::Vector3d s = cell_size();
        return origin + Eigen::Vector3d((ix + 0.5) * s.x(), (iy + 0.5) * s.y(),
                                        (iz + 0.5) * s.z());
    }

    std::size_t cell_count() const {
        return static_cast<std::size_t>(resolution.x()) * resolution.y() * resolution.z();
    }

    static GridSpec centered_cube(const Eigen::Vector3d& center, double edge, int n) {
        GridSpec spec;
        spec.resolution = {n, n, n};
        spec.extent = {edge, edge, edge};
        spec.origin = center - 0.5 * spec.extent;
        spec.validate();
        return spec;
    }

    bool operator==(const GridSpec& o) const {
        return resolution == o.resolution && origin == o.origin && extent == o.extent;
    }
};

struct VoxelGrid {
    GridSpec spec;
    std::vector<float> values; // occupancy in [0, 1]

    VoxelGrid() = default;
    explicit VoxelGrid(const GridSpec& s) : spec(s) {
        spec.validate();
        values.assign(spec.cell_count(), 0.0f);
    }

    std::size_t index(int ix, int iy, int iz) const {
        return (static_cast<std::size_t>(ix) * spec.resolution.y() + iy) *
                   spec.resolution.z() +
               iz;
    }

    float at(int ix, int iy, int iz) const { return values[index(ix, iy, iz)]; }
    void set(int ix, int iy, int iz, float v) { values[index(ix, iy, iz)] = v; }

    bool in_bounds(int ix, int iy, int iz) const {
        return ix >= 0 && iy >= 0 && iz >= 0 && ix < spec.resolution.x() &&
               iy < spec.resolution.y() && iz < spec.resolution.z();
    }
};

enum class VoxelizeMode { surface, solid };

struct VoxelizeResult {
    VoxelGrid grid;
    std::size_t dropped = 0; // inputs that touched no cell
};

namespace detail {

inline bool axis_overlap(double p0, double p1, double p2, double r) {
    const double mn = std::min({p0, p1, p2});
    const double mx = std::max({p0, p1, p2});
    return !(mn > r || mx < -r);
}

// Triangle vs axis-aligned box separating-axis test. Triangle vertices are
// given relative to the box center; h is the box half-size.
inline bool tri_box_overlap(const Eigen::Vector3d& h, Eigen::Vector3d v0,
                            Eigen::Vector3d v1, Eigen::Vector3d v2) {
    // Box face normals.
    for (int k = 0; k < 3; ++k)
        if (!axis_overlap(v0[k], v1[k], v2[k], h[k])) return false;

    // Triangle plane.
    const Eigen::Vector3d e0 = v1 - v0, e1 = v2 - v1, e2 = v0 - v2;
    const Eigen::Vector3d n = e0.cross(e1);
    const double d = n.dot(v0);
    const double rr = h.x() * std::abs(n.x()) + h.y() * std::abs(n.y()) +
                      h.z() * std::abs(n.z());
    if (std::abs(d) > rr) return false;

    // Nine cross-product axes.
    const std::array<Eigen::Vector3d, 3> edges = {e0, e1, e2};
    const std::array<Eigen::Vector3d, 3> verts = {v0, v1, v2};
    for (int e = 0; e < 3; ++e) {
        for (int k = 0; k < 3; ++k) {
            Eigen::Vector3d axis = Eigen::Vector3d::Unit(k).cross(edges[e]);
            if (axis.squaredNorm() < 1e-24) continue;
            const double p0 = axis.dot(verts[0]);
            const double p1 = axis.dot(verts[1]);
            const double p2 = axis.dot(verts[2]);
            const double r = h.x() * std::abs(axis.x()) + h.y() * std::abs(axis.y()) +
                             h.z() * std::abs(axis.z());
            if (!axis_overlap(p0, p1, p2, r)) return false;
        }
    }
    return true;
}

inline void cell_range(const GridSpec& spec, double lo, double hi, int axis, int& i0,
                       int& i1) {
    const double s = spec.cell_size()[axis];
    i0 = std::max(0, static_cast<int>(std::floor((lo - spec.origin[axis]) / s)));
    i1 = std::min(spec.resolution[axis] - 1,
                  static_cast<int>(std::floor((hi - spec.origin[axis]) / s)));
}

} // namespace detail

// Marks cells containing points. Points outside the grid are dropped and
// counted, never an error.
inline VoxelizeResult voxelize(const PointSet& points, const GridSpec& spec,
                               VoxelizeMode mode = VoxelizeMode::surface) {
    if (points.points.empty()) throw EmptyInputError("voxelize of an empty point set");
    if (mode == VoxelizeMode::solid)
        throw ParameterError("solid voxelization requires a watertight mesh");
    VoxelizeResult out;
    out.grid = VoxelGrid(spec);
    const Eigen::Vector3d s = spec.cell_size();
    for (const auto& p : points.points) {
        const Eigen::Vector3d rel = (p - spec.origin).cwiseQuotient(s);
        const int ix = static_cast<int>(std::floor(rel.x()));
        const int iy = static_cast<int>(std::floor(rel.y()));
        const int iz = static_cast<int>(std::floor(rel.z()));
        if (!out.grid.in_bounds(ix, iy, iz)) {
            ++out.dropped;
            continue;
        }
        out.grid.set(ix, iy, iz, 1.0f);
    }
    return out;
}

// Surface mode marks every cell whose box intersects a triangle. Solid mode
// additionally fills cells whose centers have winding number >= 0.5.
inline VoxelizeResult voxelize(const TriMesh& mesh, const GridSpec& spec,
                               VoxelizeMode mode = VoxelizeMode::surface) {
    mesh.validate();
    if (mesh.triangles.empty()) throw EmptyInputError("voxelize of an empty mesh");
    if (mode == VoxelizeMode::solid && !is_watertight(mesh))
        throw TopologyError("solid voxelization requires a watertight mesh");

    VoxelizeResult out;
    out.grid = VoxelGrid(spec);
    const Eigen::Vector3d h = 0.5 * spec.cell_size();

    for (const auto& t : mesh.triangles) {
        const Eigen::Vector3d& a = mesh.vertices[t[0]];
        const Eigen::Vector3d& b = mesh.vertices[t[1]];
        const Eigen::Vector3d& c = mesh.vertices[t[2]];
        Eigen::Vector3d lo = a.cwiseMin(b).cwiseMin(c);
        Eigen::Vector3d hi = a.cwiseMax(b).cwiseMax(c);
        int x0, x1, y0, y1, z0, z1;
        detail::cell_range(spec, lo.x(), hi.x(), 0, x0, x1);
        detail::cell_range(spec, lo.y(), hi.y(), 1, y0, y1);
        detail::cell_range(spec, lo.z(), hi.z(), 2, z0, z1);
        bool touched = false;
        for (int ix = x0; ix <= x1; ++ix)
            for (int iy = y0; iy <= y1; ++iy)
                for (int iz = z0; iz <= z1; ++iz) {
                    const Eigen::Vector3d center = spec.cell_center(ix, iy, iz);
                    if (detail::tri_box_overlap(h, a - center, b - center, c - center)) {
                        out.grid.set(ix, iy, iz, 1.0f);
                        touched = true;
                    }
                }
        if (!touched) ++out.dropped;
    }

    if (mode == VoxelizeMode::solid) {
        Eigen::Vector3d lo = mesh.vertices.front(), hi = lo;
        for (const auto& v : mesh.vertices) {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
        int x0, x1, y0, y1, z0, z1;
        detail::cell_range(spec, lo.x(), hi.x(), 0, x0, x1);
        detail::cell_range(spec, lo.y(), hi.y(), 1, y0, y1);
        detail::cell_range(spec, lo.z(), hi.z(), 2, z0, z1);
        const std::size_t nx = static_cast<std::size_t>(std::max(0, x1 - x0 + 1));
        const std::size_t ny = static_cast<std::size_t>(std::max(0, y1 - y0 + 1));
        const std::size_t nz = static_cast<std::size_t>(std::max(0, z1 - z0 + 1));
        const std::size_t total = nx * ny * nz;
        detail::parallel_chunks(total, 1024, [&](std::size_t, std::size_t b,
                                                 std::size_t e) {
            for (std::size_t f = b; f < e; ++f) {
                const int ix = x0 + static_cast<int>(f / (ny * nz));
                const int iy = y0 + static_cast<int>((f / nz) % ny);
                const int iz = z0 + static_cast<int>(f % nz);
                if (out.grid.at(ix, iy, iz) > 0.0f) continue;
                if (winding_number(mesh, spec.cell_center(ix, iy, iz)) >= 0.5)
                    out.grid.set(ix, iy, iz, 1.0f);
            }
        });
    }
    return out;
}

// Coarsens by an integer factor per axis; each coarse cell takes the max of
// its fine children (resolution must divide evenly).
inline VoxelGrid downsample_max(const VoxelGrid& g, int factor) {
    if (factor < 1) throw ParameterError("downsample factor must be >= 1");
    for (int k = 0; k < 3; ++k)
        if (g.spec.resolution[k] % factor != 0)
            throw ShapeError("resolution not divisible by downsample factor");
    GridSpec spec = g.spec;
    spec.resolution /= factor;
    VoxelGrid out(spec);
    for (int ix = 0; ix < spec.resolution.x(); ++ix)
        for (int iy = 0; iy < spec.resolution.y(); ++iy)
            for (int iz = 0; iz < spec.resolution.z(); ++iz) {
                float m = 0.0f;
                for (int dx = 0; dx < factor; ++dx)
                    for (int dy = 0; dy < factor; ++dy)
                        for (int dz = 0; dz < factor; ++dz)
                            m = std::max(m, g.at(ix * factor + dx, iy * factor + dy,
                                                 iz * factor + dz));
                out.set(ix, iy, iz, m);
            }
    return out;
}

// Four co-registered occupancy grids, coarse to fine, at resolutions
// (r, 2r, 4r, 8r) over a shared origin/extent.
struct MultiResVoxel {
    std::array<VoxelGrid, 4> levels;

    const VoxelGrid& finest() const { return levels[3]; }
    const VoxelGrid& coarsest() const { return levels[0]; }
};

inline MultiResVoxel multires_voxelize(const PointSet& points, const GridSpec& base_spec) {
    base_spec.validate();
    MultiResVoxel out;
    for (int level = 0; level < 4; ++level) {
        GridSpec spec = base_spec;
        spec.resolution *= (1 << level);
        out.levels[level] = voxelize(points, spec, VoxelizeMode::surface).grid;
    }
    return out;
}

namespace detail {
inline void require_matching(const VoxelGrid& a, const VoxelGrid& b) {
    if (!(a.spec == b.spec)) throw ShapeError("voxel grids have mismatched specs");
}
} // namespace detail

// Intersection over union of the grids binarized at 0.5; two empty grids
// compare as identical (1.0).
inline double voxel_iou(const VoxelGrid& a, const VoxelGrid& b) {
    detail::require_matching(a, b);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const bool oa = a.values[i] >= 0.5f;
        const bool ob = b.values[i] >= 0.5f;
        inter += oa && ob;
        uni += oa || ob;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Mean absolute occupancy difference.
inline double voxel_l1(const VoxelGrid& a, const VoxelGrid& b) {
    detail::require_matching(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        sum += std::abs(static_cast<double>(a.values[i]) - b.values[i]);
    return sum / static_cast<double>(a.values.size());
}

// Euclidean norm of the occupancy difference.
inline double voxel_l2(const VoxelGrid& a, const VoxelGrid& b) {
    detail::require_matching(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = static_cast<double>(a.values[i]) - b.values[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

// Separable Gaussian blur in cell units; the field outside the grid is zero.
// Useful for softening binary occupancy before gradient-based fitting.
inline VoxelGrid smooth_grid(const VoxelGrid& g, double sigma_cells) {
    if (sigma_cells <= 0.0) return g;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_cells)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * (k / sigma_cells) * (k / sigma_cells));
        ksum += kernel[k + radius];
    }
    for (auto& k : kernel) k /= ksum;

    const Eigen::Vector3i n = g.spec.resolution;
    VoxelGrid a = g, b(g.spec);
    auto pass = [&](const VoxelGrid& src, VoxelGrid& dst, int axis) {
        for (int ix = 0; ix < n.x(); ++ix)
            for (int iy = 0; iy < n.y(); ++iy)
                for (int iz = 0; iz < n.z(); ++iz) {
                    double acc = 0.0;
                    for (int k = -radius; k <= radius; ++k) {
                        int jx = ix, jy = iy, jz = iz;
                        (axis == 0 ? jx : axis == 1 ? jy : jz) += k;
                        if (src.in_bounds(jx, jy, jz))
                            acc += kernel[k + radius] * src.at(jx, jy, jz);
                    }
                    dst.set(ix, iy, iz,
                            static_cast<float>(std::clamp(acc, 0.0, 1.0)));
                }
    };
    pass(a, b, 0);
    pass(b, a, 1);
    pass(a, b, 2);
    return b;
}

// Continuous trilinear sample of a grid at point y in the grid's frame;
// samples sit at cell centers and the field is zero outside the border cells.
// If grad is non-null it receives d(value)/d(y).
inline double sample_trilinear(const VoxelGrid& g, const Eigen::Vector3d& y,
                               Eigen::Vector3d* grad = nullptr) {
    const Eigen::Vector3d s = g.spec.cell_size();
    const Eigen::Vector3d u = (y - g.spec.origin).cwiseQuotient(s) -
                              Eigen::Vector3d::Constant(0.5);
    const int i0 = static_cast<int>(std::floor(u.x()));
    const int j0 = static_cast<int>(std::floor(u.y()));
    const int k0 = static_cast<int>(std::floor(u.z()));
    const double fx = u.x() - i0, fy = u.y() - j0, fz = u.z() - k0;

    double c[2][2][2];
    for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz)
                c[dx][dy][dz] = g.in_bounds(i0 + dx, j0 + dy, k0 + dz)
                                    ? g.at(i0 + dx, j0 + dy, k0 + dz)
                                    : 0.0;

    const double c00 = c[0][0][0] * (1 - fz) + c[0][0][1] * fz;
    const double c01 = c[0][1][0] * (1 - fz) + c[0][1][1] * fz;
    const double c10 = c[1][0][0] * (1 - fz) + c[1][0][1] * fz;
    const double c11 = c[1][1][0] * (1 - fz) + c[1][1][1] * fz;
    const double c0 = c00 * (1 - fy) + c01 * fy;
    const double c1 = c10 * (1 - fy) + c11 * fy;
    const double value = c0 * (1 - fx) + c1 * fx;

    if (grad) {
        const double dvx = c1 - c0;
        const double dvy = (c01 - c00) * (1 - fx) + (c11 - c10) * fx;
        const double dz00 = c[0][0][1] - c[0][0][0];
        const double dz01 = c[0][1][1] - c[0][1][0];
        const double dz10 = c[1][0][1] - c[1][0][0];
        const double dz11 = c[1][1][1] - c[1][1][0];
        const double dvz = (dz00 * (1 - fy) + dz01 * fy) * (1 - fx) +
                           (dz10 * (1 - fy) + dz11 * fy) * fx;
        (*grad) = Eigen::Vector3d(dvx / s.x(), dvy / s.y(), dvz / s.z());
    }
    return value;
}

} // namespace artifit
