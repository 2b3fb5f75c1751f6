#pragma once

// Reference implementations used only by tests. They are written for
// obviousness rather than speed and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

using Edge = std::pair<std::size_t, std::size_t>;
using Rows = std::vector<std::vector<double>>;

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Full stable sort of every other node by distance; first k become edges.
inline std::set<Edge> knn_edges(const Rows& x, std::size_t k) {
    std::set<Edge> out;
    const std::size_t n = x.size();
    k = std::min(k, n ? n - 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) others.push_back(j);
        }
        std::stable_sort(others.begin(), others.end(),
                         [&](std::size_t a, std::size_t b) { return euclid(x[i], x[a]) < euclid(x[i], x[b]); });
        for (std::size_t r = 0; r < k; ++r) out.insert({std::min(i, others[r]), std::max(i, others[r])});
    }
    return out;
}

// Enumerate the whole N x N matrix, stable sort by distance (lexicographic on
// ties because enumeration is lexicographic), take the first k.
inline std::set<Edge> topk_pairs(const Rows& a, const Rows& b, std::size_t k) {
    std::vector<Edge> all;
    for (std::size_t j = 0; j < a.size(); ++j) {
        for (std::size_t q = 0; q < b.size(); ++q) all.emplace_back(j, q);
    }
    std::stable_sort(all.begin(), all.end(), [&](const Edge& x, const Edge& y) {
        return euclid(a[x.first], b[x.second]) < euclid(a[y.first], b[y.second]);
    });
    all.resize(std::min(k, all.size()));
    std::set<Edge> out;
    for (auto [j, q] : all) out.insert({j, a.size() + q});
    return out;
}

// Parent region by 2D coordinates: (row, col) / s, re-linearised.
inline std::size_t hsg_parent(std::size_t j, std::size_t high_w, std::size_t s) {
    const std::size_t row = j / high_w, col = j % high_w;
    const std::size_t low_w = high_w / s;
    return (row / s) * low_w + col / s;
}

// Minimal number of unit-cost edits by exhaustive search over edit scripts
// (recursive, exponential; fine for length <= 4).
template <class Seq>
std::size_t edit_distance_exhaustive(const Seq& h, std::size_t i, const Seq& r, std::size_t j) {
    if (i == h.size()) return r.size() - j;
    if (j == r.size()) return h.size() - i;
    std::size_t best = 1 + edit_distance_exhaustive(h, i + 1, r, j);          // insertion in hyp
    best = std::min(best, 1 + edit_distance_exhaustive(h, i, r, j + 1));      // deletion of ref
    best = std::min(best, (h[i] != r[j]) + edit_distance_exhaustive(h, i + 1, r, j + 1));
    return best;
}

}  // namespace oracle
