#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>

#include "artifit/error.hpp"
#include "artifit/geometry.hpp"

namespace artifit {

// Axis-aligned closed box, outward-oriented, 12 triangles.
inline TriMesh make_box(const Eigen::Vector3d& center, const Eigen::Vector3d& size) {
    if (size.minCoeff() <= 0.0) throw ParameterError("box size must be positive");
    TriMesh m;
    const Eigen::Vector3d h = 0.5 * size;
    for (int i = 0; i < 8; ++i)
        m.vertices.push_back(center + Eigen::Vector3d((i & 1) ? h.x() : -h.x(),
                                                      (i & 2) ? h.y() : -h.y(),
                                                      (i & 4) ? h.z() : -h.z()));
    // Each face as two triangles, wound counterclockwise seen from outside.
    static const int faces[6][4] = {{0, 4, 6, 2},   // -x
                                    {1, 3, 7, 5},   // +x
                                    {0, 1, 5, 4},   // -y
                                    {2, 6, 7, 3},   // +y
                                    {0, 2, 3, 1},   // -z
                                    {4, 5, 7, 6}};  // +z
    for (const auto& f : faces) {
        m.triangles.push_back({f[0], f[1], f[2]});
        m.triangles.push_back({f[0], f[2], f[3]});
    }
    return m;
}

// Regular icosahedron with unit circumradius, centered at the origin.
inline TriMesh make_icosahedron() {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    const double s = 1.0 / std::sqrt(1.0 + phi * phi);
    TriMesh m;
    auto add = [&](double x, double y, double z) {
        m.vertices.push_back(s * Eigen::Vector3d(x, y, z));
    };
    add(-1, phi, 0); add(1, phi, 0); add(-1, -phi, 0); add(1, -phi, 0);
    add(0, -1, phi); add(0, 1, phi); add(0, -1, -phi); add(0, 1, -phi);
    add(phi, 0, -1); add(phi, 0, 1); add(-phi, 0, -1); add(-phi, 0, 1);
    static const int f[20][3] = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (const auto& t : f) m.triangles.push_back({t[0], t[1], t[2]});
    return m;
}

// Sphere approximation: icosahedron subdivided `subdiv` times, vertices
// projected onto the sphere. 20*4^subdiv triangles.
inline TriMesh make_icosphere(double radius, const Eigen::Vector3d& center,
                              int subdiv = 3) {
    if (radius <= 0.0) throw ParameterError("sphere radius must be positive");
    if (subdiv < 0 || subdiv > 7) throw ParameterError("subdiv must be in [0, 7]");
    TriMesh m = make_icosahedron();
    for (int level = 0; level < subdiv; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const int idx = static_cast<int>(m.vertices.size());
            m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(m.triangles.size() * 4);
        for (const auto& t : m.triangles) {
            const int ab = mid(t[0], t[1]);
            const int bc = mid(t[1], t[2]);
            const int ca = mid(t[2], t[0]);
            next.push_back({t[0], ab, ca});
            next.push_back({t[1], bc, ab});
            next.push_back({t[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        m.triangles = std::move(next);
    }
    for (auto& v : m.vertices) v = center + radius * v.normalized();
    return m;
}

// Closed tube from p0 to p1: cylindrical side of `segments` quads with conical
// end caps (apex offset by the radius along the axis). Watertight.
inline TriMesh make_capsule(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1,
                            double radius, int segments = 8) {
    if (radius <= 0.0) throw ParameterError("capsule radius must be positive");
    if (segments < 3) throw ParameterError("capsule needs at least 3 segments");
    const Eigen::Vector3d axis = p1 - p0;
    const double len = axis.norm();
    if (len < 1e-12) throw DegenerateGeometryError("capsule endpoints coincide");
    const Eigen::Vector3d u = axis / len;
    Eigen::Vector3d ref = std::abs(u.x()) < 0.9 ? Eigen::Vector3d::UnitX()
                                                : Eigen::Vector3d::UnitY();
    const Eigen::Vector3d e1 = u.cross(ref).normalized();
    const Eigen::Vector3d e2 = u.cross(e1);

    TriMesh m;
    for (int ring = 0; ring < 2; ++ring) {
        const Eigen::Vector3d c = ring == 0 ? p0 : p1;
        for (int s = 0; s < segments; ++s) {
            const double a = 2.0 * std::numbers::pi * s / segments;
            m.vertices.push_back(c + radius * (std::cos(a) * e1 + std::sin(a) * e2));
        }
    }
    const int apex0 = static_cast<int>(m.vertices.size());
    m.vertices.push_back(p0 - radius * u);
    const int apex1 = apex0 + 1;
    m.vertices.push_back(p1 + radius * u);

    for (int s = 0; s < segments; ++s) {
        const int sn = (s + 1) % segments;
        const int a0 = s, a1 = sn;                        // ring at p0
        const int b0 = segments + s, b1 = segments + sn;  // ring at p1
        m.triangles.push_back({a0, a1, b1});
        m.triangles.push_back({a0, b1, b0});
        m.triangles.push_back({apex0, a1, a0});
        m.triangles.push_back({apex1, b0, b1});
    }
    return m;
}

} // namespace artifit
