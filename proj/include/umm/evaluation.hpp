#pragma once

#include <algorithm>
#include <map>
#include <numeric>

#include "core.hpp"

namespace umm {

// Frozen evaluation view of a dataset: unit-norm feature rows with labels,
// plus optional per-row standard-deviation vectors for uncertainty summaries.
struct EmbeddingTable {
    Mat features;            // m x D, rows unit-norm
    std::vector<int> labels;
    Mat sigmas;              // m x D or empty
};

inline void validate(const EmbeddingTable& t) {
    if (t.features.rows == 0) throw std::invalid_argument("EmbeddingTable: empty");
    if (t.labels.size() != t.features.rows)
        throw std::invalid_argument("EmbeddingTable: label count mismatch");
    if (t.sigmas.rows != 0 &&
        (t.sigmas.rows != t.features.rows || t.sigmas.cols != t.features.cols))
        throw std::invalid_argument("EmbeddingTable: sigma shape mismatch");
    for (std::size_t r = 0; r < t.features.rows; ++r)
        if (std::abs(norm2(t.features.row(r), t.features.cols) - 1.0) > 1e-6)
            throw std::invalid_argument("EmbeddingTable: rows must be unit-norm");
}

namespace detail {

// Indices of the top_k highest-cosine rows (ties toward the lower index),
// optionally skipping one row (self-queries).
inline std::vector<std::size_t> top_neighbors(const EmbeddingTable& t, const Vec& query,
                                              std::size_t top_k, std::ptrdiff_t exclude) {
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(t.features.rows);
    for (std::size_t r = 0; r < t.features.rows; ++r) {
        if (static_cast<std::ptrdiff_t>(r) == exclude) continue;
        scored.emplace_back(dot(t.features.row(r), query.data(), t.features.cols), r);
    }
    std::size_t k = std::min(top_k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + k, scored.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = scored[i].second;
    return out;
}

}  // namespace detail

// Weighted vote over the top_k cosine neighbors, weight exp(cos/tau);
// ties go to the smallest label id.
inline int weighted_knn(const EmbeddingTable& table, const Vec& query, std::size_t top_k = 200,
                        double tau = 0.1, std::ptrdiff_t exclude_index = -1) {
    validate(table);
    if (!(tau > 0.0)) throw std::invalid_argument("weighted_knn: tau must be positive");
    if (query.size() != table.features.cols)
        throw std::invalid_argument("weighted_knn: query dimension mismatch");
    auto nbrs = detail::top_neighbors(table, query, top_k, exclude_index);
    if (nbrs.empty()) throw std::invalid_argument("weighted_knn: no neighbors available");
    std::map<int, double> vote;
    for (std::size_t r : nbrs) {
        double cos = dot(table.features.row(r), query.data(), table.features.cols);
        vote[table.labels[r]] += std::exp(cos / tau);
    }
    int best = vote.begin()->first;
    double best_w = vote.begin()->second;
    for (const auto& [label, w] : vote)
        if (w > best_w) {
            best = label;
            best_w = w;
        }
    return best;
}

// Fraction of test rows classified correctly. When both arguments are the
// same object, each query leaves itself out of the vote.
inline double knn_accuracy(const EmbeddingTable& train, const EmbeddingTable& test,
                           std::size_t top_k = 200, double tau = 0.1) {
    validate(train);
    validate(test);
    bool self = (&train == &test);
    std::size_t hits = 0;
    Vec q(test.features.cols);
    for (std::size_t r = 0; r < test.features.rows; ++r) {
        std::copy(test.features.row(r), test.features.row(r) + test.features.cols, q.begin());
        int pred = weighted_knn(train, q, top_k, tau, self ? static_cast<std::ptrdiff_t>(r) : -1);
        if (pred == test.labels[r]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(test.features.rows);
}

// Recall@k, self excluded: a query succeeds at k if any of its k nearest
// other rows shares its label.
inline std::map<int, double> recall_at(const EmbeddingTable& table, const std::vector<int>& ks) {
    validate(table);
    if (table.features.rows < 2) throw std::invalid_argument("recall_at: need at least 2 rows");
    for (int k : ks)
        if (k < 1) throw std::invalid_argument("recall_at: k must be positive");
    int max_k = *std::max_element(ks.begin(), ks.end());
    std::map<int, double> out;
    for (int k : ks) out[k] = 0.0;
    Vec q(table.features.cols);
    for (std::size_t r = 0; r < table.features.rows; ++r) {
        std::copy(table.features.row(r), table.features.row(r) + table.features.cols, q.begin());
        auto nbrs = detail::top_neighbors(table, q, static_cast<std::size_t>(max_k),
                                          static_cast<std::ptrdiff_t>(r));
        int first_hit = -1;
        for (std::size_t i = 0; i < nbrs.size(); ++i)
            if (table.labels[nbrs[i]] == table.labels[r]) {
                first_hit = static_cast<int>(i) + 1;
                break;
            }
        for (int k : ks)
            if (first_hit > 0 && first_hit <= k) out[k] += 1.0;
    }
    for (auto& [k, v] : out) v /= static_cast<double>(table.features.rows);
    return out;
}

// Normalized mutual information I(A;L)/sqrt(H(A) H(L)), with 0/0 -> 0.
inline double nmi(const std::vector<int>& assignments, const std::vector<int>& labels) {
    if (assignments.size() != labels.size() || assignments.empty())
        throw std::invalid_argument("nmi: need equal nonzero lengths");
    const double m = static_cast<double>(assignments.size());
    std::map<int, double> pa, pl;
    std::map<std::pair<int, int>, double> pj;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        pa[assignments[i]] += 1.0;
        pl[labels[i]] += 1.0;
        pj[{assignments[i], labels[i]}] += 1.0;
    }
    double ha = 0.0, hl = 0.0, mi = 0.0;
    for (auto& [k, c] : pa) ha -= (c / m) * std::log(c / m);
    for (auto& [k, c] : pl) hl -= (c / m) * std::log(c / m);
    for (auto& [kv, c] : pj) {
        double p = c / m;
        mi += p * std::log(p * m * m / (pa[kv.first] * pl[kv.second]));
    }
    if (ha <= 0.0 || hl <= 0.0) return 0.0;
    return std::clamp(mi / std::sqrt(ha * hl), 0.0, 1.0);
}

// Lloyd's k-means with seeded random-point restarts, keeping the assignment
// with the best inertia. Deterministic for a fixed seed.
inline std::vector<int> kmeans(const Mat& rows, std::size_t k, std::uint64_t seed,
                               int restarts = 20) {
    if (rows.rows == 0 || k == 0) throw std::invalid_argument("kmeans: empty input");
    k = std::min(k, rows.rows);
    Rng rng(splitmix64(seed));
    std::vector<int> best_assign(rows.rows, 0);
    double best_inertia = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(rows.rows);
    for (int rep = 0; rep < restarts; ++rep) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        Mat centers(k, rows.cols);
        for (std::size_t c = 0; c < k; ++c)
            std::copy(rows.row(order[c]), rows.row(order[c]) + rows.cols, centers.row(c));

        std::vector<int> assign(rows.rows, -1);
        for (int iter = 0; iter < 100; ++iter) {
            bool changed = false;
            for (std::size_t r = 0; r < rows.rows; ++r) {
                int arg = 0;
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < k; ++c) {
                    double d2 = 0.0;
                    for (std::size_t j = 0; j < rows.cols; ++j) {
                        double diff = rows(r, j) - centers(c, j);
                        d2 += diff * diff;
                    }
                    if (d2 < best) {
                        best = d2;
                        arg = static_cast<int>(c);
                    }
                }
                if (assign[r] != arg) {
                    assign[r] = arg;
                    changed = true;
                }
            }
            centers.fill(0.0);
            std::vector<std::size_t> counts(k, 0);
            for (std::size_t r = 0; r < rows.rows; ++r) {
                ++counts[assign[r]];
                for (std::size_t j = 0; j < rows.cols; ++j) centers(assign[r], j) += rows(r, j);
            }
            for (std::size_t c = 0; c < k; ++c) {
                if (counts[c] == 0) {
                    // keep an empty cluster pinned on a deterministic row
                    std::size_t src = order[(rep + static_cast<int>(c)) % rows.rows];
                    std::copy(rows.row(src), rows.row(src) + rows.cols, centers.row(c));
                    continue;
                }
                for (std::size_t j = 0; j < rows.cols; ++j)
                    centers(c, j) /= static_cast<double>(counts[c]);
            }
            if (!changed) break;
        }
        double inertia = 0.0;
        for (std::size_t r = 0; r < rows.rows; ++r)
            for (std::size_t j = 0; j < rows.cols; ++j) {
                double diff = rows(r, j) - centers(assign[r], j);
                inertia += diff * diff;
            }
        if (inertia < best_inertia) {
            best_inertia = inertia;
            best_assign = assign;
        }
    }
    return best_assign;
}

// Clustering-quality score of a table: k-means into #distinct-labels
// clusters, then NMI against the labels.
inline double clustering_nmi(const EmbeddingTable& table, std::uint64_t seed = 7) {
    validate(table);
    std::map<int, int> distinct;
    for (int l : table.labels) distinct[l] = 1;
    auto assign = kmeans(table.features, distinct.size(), seed);
    return nmi(assign, table.labels);
}

struct CosineHistogram {
    Vec centers;
    std::vector<std::size_t> positive;  // same-label pair counts
    std::vector<std::size_t> negative;  // cross-label pair counts
};

// Counts of all unordered pairwise cosines over fixed-width bins on [-1, 1],
// split by whether the pair shares a label.
inline CosineHistogram cosine_histogram(const EmbeddingTable& table, int bins) {
    validate(table);
    if (table.features.rows < 2) throw std::invalid_argument("cosine_histogram: need >= 2 rows");
    if (bins < 1) throw std::invalid_argument("cosine_histogram: bins must be positive");
    CosineHistogram h;
    double width = 2.0 / bins;
    h.centers.resize(bins);
    for (int b = 0; b < bins; ++b) h.centers[b] = -1.0 + (b + 0.5) * width;
    h.positive.assign(bins, 0);
    h.negative.assign(bins, 0);
    for (std::size_t i = 0; i < table.features.rows; ++i)
        for (std::size_t j = i + 1; j < table.features.rows; ++j) {
            double cos = dot(table.features.row(i), table.features.row(j), table.features.cols);
            int b = std::clamp(static_cast<int>((cos + 1.0) / width), 0, bins - 1);
            if (table.labels[i] == table.labels[j])
                ++h.positive[b];
            else
                ++h.negative[b];
        }
    return h;
}

// Mean Euclidean norm of the per-row standard-deviation vectors.
inline double mean_uncertainty(const Mat& sigmas) {
    if (sigmas.rows == 0) throw std::invalid_argument("mean_uncertainty: empty input");
    double acc = 0.0;
    for (std::size_t r = 0; r < sigmas.rows; ++r) acc += norm2(sigmas.row(r), sigmas.cols);
    return acc / static_cast<double>(sigmas.rows);
}

namespace detail {

inline Vec ranks_with_ties(const Vec& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    Vec r(x.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace detail

// Spearman rank correlation (average ranks on ties); 0 when either side is
// constant.
inline double spearman(const Vec& x, const Vec& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("spearman: need equal lengths >= 2");
    Vec rx = detail::ranks_with_ties(x), ry = detail::ranks_with_ties(y);
    double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
    double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace umm
