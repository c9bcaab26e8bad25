#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "artifit/detail/parallel.hpp"
#include "artifit/error.hpp"
#include "artifit/rng.hpp"
#include "artifit/spatial.hpp"

namespace artifit {

// Positions in meters; optional per-point unit normals (empty or size N).
struct PointSet {
    std::vector<Eigen::Vector3d> points;
    std::vector<Eigen::Vector3d> normals;

    std::size_t size() const { return points.size(); }
};

struct TriMesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<std::array<int, 3>> triangles;

    void validate() const {
        const int n = static_cast<int>(vertices.size());
        for (const auto& t : triangles) {
            for (int k = 0; k < 3; ++k)
                if (t[k] < 0 || t[k] >= n)
                    throw TopologyError("triangle vertex index out of range");
            if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
                throw TopologyError("triangle repeats a vertex index");
        }
    }

    TriMesh transformed(const Eigen::Isometry3d& t) const {
        TriMesh out = *this;
        for (auto& v : out.vertices) v = t * v;
        return out;
    }
};

// Appends`other` as an extra connected component.
inline void append_mesh(TriMesh& mesh, const TriMesh& other) {
    const int base = static_cast<int>(mesh.vertices.size());
    mesh.vertices.insert(mesh.vertices.end(), other.vertices.begin(), other.vertices.end());
    for (const auto& t : other.triangles)
        mesh.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
}

// Closed orientable surface test: every directed edge appears exactly once and
// is matched by its reverse. This is the precondition for the winding-number
// inside test to be exact.
inline bool is_watertight(const TriMesh& mesh) {
    if (mesh.triangles.empty()) return false;
    std::unordered_map<std::uint64_t, int> edges;
    edges.reserve(mesh.triangles.size() * 3);
    auto key = [](int a, int b) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
               static_cast<std::uint32_t>(b);
    };
    for (const auto& t : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = t[k], b = t[(k + 1) % 3];
            if (a == b) return false;
            if (++edges[key(a, b)] > 1) return false;
        }
    }
    for (const auto& [k, count] : edges) {
        const int a = static_cast<int>(k >> 32);
        const int b = static_cast<int>(k & 0xffffffffu);
        auto it = edges.find(key(b, a));
        if (it == edges.end() || it->second != 1) return false;
    }
    return true;
}

namespace detail {

// Signed solid angle of triangle (a,b,c) seen from p (van Oosterom-Strackee).
inline double solid_angle(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                          const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
    const Eigen::Vector3d va = a - p, vb = b - p, vc = c - p;
    const double la = va.norm(), lb = vb.norm(), lc = vc.norm();
    const double num = va.dot(vb.cross(vc));
    const double den =
        la * lb * lc + va.dot(vb) * lc + vb.dot(vc) * la + vc.dot(va) * lb;
    return 2.0 * std::atan2(num, den);
}

// Closest point on triangle (a,b,c) to p; Voronoi-region walk.
inline Eigen::Vector3d closest_point_triangle(const Eigen::Vector3d& p,
                                              const Eigen::Vector3d& a,
                                              const Eigen::Vector3d& b,
                                              const Eigen::Vector3d& c) {
    const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    const Eigen::Vector3d bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

    const Eigen::Vector3d cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

} // namespace detail

// Generalized winding number of the mesh boundary around p; 1 inside a closed
// surface, 0 outside, ~0.5 on the surface itself.
inline double winding_number(const TriMesh& mesh, const Eigen::Vector3d& p) {
    double total = 0.0;
    for (const auto& t : mesh.triangles)
        total += detail::solid_angle(p, mesh.vertices[t[0]], mesh.vertices[t[1]],
                                     mesh.vertices[t[2]]);
    return total / (4.0 * std::numbers::pi);
}

struct SurfaceHit {
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    double distance = 0.0;
    int triangle = -1;
};

inline SurfaceHit closest_point_on_mesh(const TriMesh& mesh, const Eigen::Vector3d& p) {
    if (mesh.triangles.empty()) throw EmptyInputError("mesh has no triangles");
    SurfaceHit best;
    double best2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        const Eigen::Vector3d cp = detail::closest_point_triangle(
            p, mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        const double d2 = (cp - p).squaredNorm();
        if (d2 < best2) {
            best2 = d2;
            best.point = cp;
            best.triangle = static_cast<int>(i);
        }
    }
    best.distance = std::sqrt(best2);
    return best;
}

// Symmetric mean chamfer distance in millimeters: half the sum of the two
// directed mean nearest-neighbor distances.
inline double chamfer_distance(const PointSet& a, const PointSet& b) {
    if (a.points.empty() || b.points.empty())
        throw EmptyInputError("chamfer distance of an empty point set");
    const KdTree3 ta(a.points), tb(b.points);
    double sum_ab = 0.0, sum_ba = 0.0;
    for (const auto& p : a.points) sum_ab += std::sqrt(tb.nearest(p).squared_distance);
    for (const auto& q : b.points) sum_ba += std::sqrt(ta.nearest(q).squared_distance);
    const double mean =
        0.5 * (sum_ab / static_cast<double>(a.points.size()) +
               sum_ba / static_cast<double>(b.points.size()));
    return mean * 1000.0;
}

// Smallest distance between the two sets, clipped to [0, 200] mm.
inline double contact_value(const PointSet& a, const PointSet& b) {
    if (a.points.empty() || b.points.empty())
        throw EmptyInputError("contact value of an empty point set");
    const KdTree3 tb(b.points);
    double best2 = std::numeric_limits<double>::infinity();
    for (const auto& p : a.points) best2 = std::min(best2, tb.nearest(p).squared_distance);
    return std::clamp(std::sqrt(best2) * 1000.0, 0.0, 200.0);
}

struct PenetrationResult {
    double max_depth_mm = 0.0;
    std::vector<double> depth_mm;              // per point, 0 outside
    std::vector<Eigen::Vector3d> direction;    // unit, point -> closest surface point
};

// Depth of each point inside a watertight body: inside/outside decided by the
// generalized winding number at 0.5, depth measured to the closest surface
// point. Points outside report zero depth and a zero direction.
inline PenetrationResult penetration_depth(const TriMesh& body, const PointSet& object) {
    if (object.points.empty())
        throw EmptyInputError("penetration depth of an empty point set");
    body.validate();
    if (!is_watertight(body))
        throw TopologyError("penetration body mesh is not watertight");

    PenetrationResult result;
    const std::size_t n = object.points.size();
    result.depth_mm.assign(n, 0.0);
    result.direction.assign(n, Eigen::Vector3d::Zero());

    detail::parallel_chunks(n, 64, [&](std::size_t, std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const Eigen::Vector3d& p = object.points[i];
            if (winding_number(body, p) < 0.5) continue;
            const SurfaceHit hit = closest_point_on_mesh(body, p);
            result.depth_mm[i] = hit.distance * 1000.0;
            if (hit.distance > 1e-12)
                result.direction[i] = (hit.point - p) / hit.distance;
        }
    });
    for (double d : result.depth_mm) result.max_depth_mm = std::max(result.max_depth_mm, d);
    return result;
}

// Deterministic area-weighted surface sampling; normals are face normals.
inline PointSet sample_surface(const TriMesh& mesh, std::size_t count,
                               std::uint64_t seed) {
    mesh.validate();
    if (mesh.triangles.empty()) throw EmptyInputError("sampling an empty mesh");

    std::vector<double> cumulative(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        const Eigen::Vector3d e1 = mesh.vertices[t[1]] - mesh.vertices[t[0]];
        const Eigen::Vector3d e2 = mesh.vertices[t[2]] - mesh.vertices[t[0]];
        total += 0.5 * e1.cross(e2).norm();
        cumulative[i] = total;
    }
    if (total <= 0.0) throw DegenerateGeometryError("mesh has zero surface area");

    PointSet out;
    out.points.reserve(count);
    out.normals.reserve(count);
    Rng rng(seed);
    for (std::size_t s = 0; s < count; ++s) {
        const double u = rng.uniform() * total;
        const std::size_t i =
            std::min(static_cast<std::size_t>(
                         std::lower_bound(cumulative.begin(), cumulative.end(), u) -
                         cumulative.begin()),
                     mesh.triangles.size() - 1);
        const auto& t = mesh.triangles[i];
        const Eigen::Vector3d& a = mesh.vertices[t[0]];
        const Eigen::Vector3d& b = mesh.vertices[t[1]];
        const Eigen::Vector3d& c = mesh.vertices[t[2]];
        const double r1 = std::sqrt(rng.uniform());
        const double r2 = rng.uniform();
        out.points.push_back((1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c);
        Eigen::Vector3d n = (b - a).cross(c - a);
        const double ln = n.norm();
        out.normals.push_back(ln > 1e-18 ? Eigen::Vector3d(n / ln)
                                         : Eigen::Vector3d::Zero());
    }
    return out;
}

} // namespace artifit
