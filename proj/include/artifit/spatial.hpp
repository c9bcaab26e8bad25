#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <limits>
#include <vector>

#include "artifit/error.hpp"

namespace artifit {

// Exact nearest-neighbor index over 3D points. Median-split kd-tree with full
// bound pruning: query results are exactly those of a brute-force scan (the
// test suite checks distance equality, not approximate agreement).
class KdTree3 {
public:
    struct Hit {
        int index = -1;
        double squared_distance = std::numeric_limits<double>::infinity();
    };

    KdTree3() = default;

    explicit KdTree3(std::vector<Eigen::Vector3d> points) : points_(std::move(points)) {
        if (points_.empty()) throw EmptyInputError("kd-tree build from empty point set");
        order_.resize(points_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
        nodes_.reserve(2 * points_.size());
        root_ = build(0, static_cast<int>(points_.size()));
    }

    bool empty() const { return points_.empty(); }
    std::size_t size() const { return points_.size(); }
    const Eigen::Vector3d& point(int i) const { return points_[i]; }

    Hit nearest(const Eigen::Vector3d& q) const {
        Hit best;
        search(root_, q, best);
        return best;
    }

    // Indices of the k nearest points (ties broken toward lower index by the
    // stable final sort); k is clamped to the point count.
    std::vector<int> knearest(const Eigen::Vector3d& q, int k) const {
        k = std::min<int>(k, static_cast<int>(points_.size()));
        std::vector<std::pair<double, int>> heap; // max-heap on distance
        heap.reserve(k + 1);
        search_k(root_, q, k, heap);
        std::sort(heap.begin(), heap.end());
        std::vector<int> out;
        out.reserve(heap.size());
        for (const auto& [d, i] : heap) out.push_back(i);
        return out;
    }

private:
    struct Node {
        int axis = 0;
        int point = -1;
        int left = -1;
        int right = -1;
    };

    int build(int lo, int hi) {
        if (lo >= hi) return -1;
        // Split on the widest axis of the current subset.
        Eigen::Vector3d mn = points_[order_[lo]], mx = mn;
        for (int i = lo + 1; i < hi; ++i) {
            mn = mn.cwiseMin(points_[order_[i]]);
            mx = mx.cwiseMax(points_[order_[i]]);
        }
        int axis = 0;
        (mx - mn).maxCoeff(&axis);
        const int mid = (lo + hi) / 2;
        std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                         [&](int a, int b) {
                             if (points_[a][axis] != points_[b][axis])
                                 return points_[a][axis] < points_[b][axis];
                             return a < b;
                         });
        Node node;
        node.axis = axis;
        node.point = order_[mid];
        const int self = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        const int left = build(lo, mid);
        const int right = build(mid + 1, hi);
        nodes_[self].left = left;
        nodes_[self].right = right;
        return self;
    }

    void search(int node, const Eigen::Vector3d& q, Hit& best) const {
        if (node < 0) return;
        const Node& n = nodes_[node];
        const double d2 = (points_[n.point] - q).squaredNorm();
        if (d2 < best.squared_distance ||
            (d2 == best.squared_distance && n.point < best.index)) {
            best.squared_distance = d2;
            best.index = n.point;
        }
        const double delta = q[n.axis] - points_[n.point][n.axis];
        const int near = delta < 0 ? n.left : n.right;
        const int far = delta < 0 ? n.right : n.left;
        search(near, q, best);
        if (delta * delta <= best.squared_distance) search(far, q, best);
    }

    void search_k(int node, const Eigen::Vector3d& q, int k,
                  std::vector<std::pair<double, int>>& heap) const {
        if (node < 0) return;
        const Node& n = nodes_[node];
        const double d2 = (points_[n.point] - q).squaredNorm();
        if (static_cast<int>(heap.size()) < k) {
            heap.push_back({d2, n.point});
            std::push_heap(heap.begin(), heap.end());
        } else if (d2 < heap.front().first) {
            std::pop_heap(heap.begin(), heap.end());
            heap.back() = {d2, n.point};
            std::push_heap(heap.begin(), heap.end());
        }
        const double delta = q[n.axis] - points_[n.point][n.axis];
        const int near = delta < 0 ? n.left : n.right;
        const int far = delta < 0 ? n.right : n.left;
        search_k(near, q, k, heap);
        if (static_cast<int>(heap.size()) < k || delta * delta <= heap.front().first)
            search_k(far, q, k, heap);
    }

    std::vector<Eigen::Vector3d> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

} // namespace artifit
