#pragma once

#include <algorithm>
#include <numeric>

#include "distributions.hpp"

namespace umm {

// Wraps externally constructed rows (tests, probes) as a candidate set.
// Rows must already be unit-norm; the stored norms keep the normalization
// Jacobian exact for gradient flow back to the mean.
inline CandidateSet candidate_set_from_rows(Mat rows, int source_index) {
    if (rows.rows == 0 || rows.cols == 0)
        throw std::invalid_argument("candidate_set_from_rows: empty rows");
    CandidateSet cs;
    cs.source_index = source_index;
    cs.raw = rows;
    cs.norms = Vec(rows.rows);
    cs.noise = Mat(rows.rows, rows.cols, 0.0);
    for (std::size_t j = 0; j < rows.rows; ++j) {
        double n = norm2(rows.row(j), rows.cols);
        if (std::abs(n - 1.0) > 1e-6)
            throw std::invalid_argument("candidate_set_from_rows: rows must be unit-norm");
        cs.norms[j] = n;
        for (std::size_t d = 0; d < rows.cols; ++d) rows.row(j)[d] /= n;
    }
    cs.z = std::move(rows);
    return cs;
}

// One training batch: candidate sets from the original inputs and from the
// augmented views, index-aligned.
struct BatchCandidates {
    std::vector<CandidateSet> sets;
    std::vector<CandidateSet> aug_sets;
};

inline void validate(const BatchCandidates& b) {
    if (b.sets.empty() || b.sets.size() != b.aug_sets.size())
        throw std::invalid_argument("BatchCandidates: need equal nonzero set counts");
    const std::size_t D = b.sets.front().z.cols;
    const std::size_t k = b.sets.front().z.rows;
    for (std::size_t i = 0; i < b.sets.size(); ++i) {
        if (b.sets[i].source_index != static_cast<int>(i) ||
            b.aug_sets[i].source_index != static_cast<int>(i))
            throw std::invalid_argument("BatchCandidates: source indices must match positions");
        if (b.sets[i].z.cols != D || b.aug_sets[i].z.cols != D)
            throw std::invalid_argument("BatchCandidates: sets must share dimension");
        if (b.sets[i].z.rows != k || b.aug_sets[i].z.rows != k || k == 0)
            throw std::invalid_argument("BatchCandidates: sets must share candidate count");
    }
}

// Quantization grid for the differentiable AP surrogate: B + 1 triangular
// kernels centered at -1 + 2b/B, each with one-bin-width support.
struct HistogramConfig {
    int bins = 20;  // B
};

inline void validate(const HistogramConfig& h) {
    if (h.bins < 2) throw std::invalid_argument("HistogramConfig: bins must be >= 2");
}

inline double bin_center(const HistogramConfig& h, int b) {
    return -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(h.bins);
}

// Mean of all pairwise inner products between two candidate sets,
//   d(A, B) = (1/(k_a k_b)) sum_u sum_t <a_u, b_t> = <sum_a, sum_b>/(k_a k_b).
// The gradient w.r.t. every row of A is the same vector sum_b/(k_a k_b).
struct SetDistanceResult {
    double value = 0.0;
    Vec d_a_row, d_b_row;  // per-row gradient (identical across rows of a side)
};

inline Vec column_sum(const Mat& m) {
    Vec s(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) s[c] += row[c];
    }
    return s;
}

inline double set_distance(const Mat& a, const Mat& b) {
    if (a.cols != b.cols) throw std::invalid_argument("set_distance: dimension mismatch");
    if (a.rows == 0 || b.rows == 0) throw std::invalid_argument("set_distance: empty set");
    Vec sa = column_sum(a), sb = column_sum(b);
    return dot(sa, sb) / (static_cast<double>(a.rows) * static_cast<double>(b.rows));
}

inline double set_distance(const CandidateSet& a, const CandidateSet& b) {
    return set_distance(a.z, b.z);
}

inline SetDistanceResult set_distance_grad(const Mat& a, const Mat& b) {
    if (a.cols != b.cols) throw std::invalid_argument("set_distance: dimension mismatch");
    if (a.rows == 0 || b.rows == 0) throw std::invalid_argument("set_distance: empty set");
    SetDistanceResult r;
    Vec sa = column_sum(a), sb = column_sum(b);
    double scale = 1.0 / (static_cast<double>(a.rows) * static_cast<double>(b.rows));
    r.value = dot(sa, sb) * scale;
    r.d_a_row = std::move(sb);
    r.d_b_row = std::move(sa);
    for (double& x : r.d_a_row) x *= scale;
    for (double& x : r.d_b_row) x *= scale;
    return r;
}

namespace detail {

// distances(m, i) = d(Z_m, Z'_i), plus per-set column sums reused by grads.
struct PairwiseDistances {
    Mat d;                       // n x n
    std::vector<Vec> sum_sets;   // column sums of each non-augmented set
    std::vector<Vec> sum_aug;    // column sums of each augmented set
};

inline PairwiseDistances pairwise_set_distances(const BatchCandidates& b) {
    const std::size_t n = b.sets.size();
    PairwiseDistances p;
    p.d = Mat(n, n);
    p.sum_sets.reserve(n);
    p.sum_aug.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        p.sum_sets.push_back(column_sum(b.sets[i].z));
        p.sum_aug.push_back(column_sum(b.aug_sets[i].z));
    }
    for (std::size_t m = 0; m < n; ++m)
        for (std::size_t i = 0; i < n; ++i) {
            double scale = 1.0 / (static_cast<double>(b.sets[m].z.rows) *
                                  static_cast<double>(b.aug_sets[i].z.rows));
            p.d(m, i) = dot(p.sum_sets[m], p.sum_aug[i]) * scale;
        }
    return p;
}

// Stabilized softmax over column i of the distance matrix.
inline Vec softmax_column(const Mat& d, std::size_t i, double tau) {
    const std::size_t n = d.rows;
    double mx = d(0, i);
    for (std::size_t m = 1; m < n; ++m) mx = std::max(mx, d(m, i));
    Vec p(n);
    double z = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
        p[m] = std::exp((d(m, i) - mx) / tau);
        z += p[m];
    }
    for (double& x : p) x /= z;
    return p;
}

}  // namespace detail

// P(x'_i | x_i): probability that instance i's augmented set is matched to
// its own candidate set under the set-to-set softmax over all n instances.
inline double softmax_probability(const BatchCandidates& b, std::size_t i, double tau) {
    validate(b);
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_probability: tau must be positive");
    if (i >= b.sets.size()) throw std::invalid_argument("softmax_probability: index out of range");
    auto pd = detail::pairwise_set_distances(b);
    return detail::softmax_column(pd.d, i, tau)[i];
}

struct SoftmaxLossResult {
    double value = 0.0;
    std::vector<Mat> d_sets, d_aug_sets;  // per-row gradients, aligned with the batch
};

// L_S = -sum_i log P(x'_i | x_i).
inline SoftmaxLossResult loss_softmax(const BatchCandidates& b, double tau) {
    validate(b);
    if (!(tau > 0.0)) throw std::invalid_argument("loss_softmax: tau must be positive");
    const std::size_t n = b.sets.size();
    auto pd = detail::pairwise_set_distances(b);

    SoftmaxLossResult r;
    // dL/dd(m, i), assembled anchor by anchor.
    Mat g(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec p = detail::softmax_column(pd.d, i, tau);
        r.value += -std::log(p[i]);
        for (std::size_t m = 0; m < n; ++m)
            g(m, i) = (p[m] - (m == i ? 1.0 : 0.0)) / tau;
    }

    const std::size_t D = b.sets.front().z.cols;
    r.d_sets.reserve(n);
    r.d_aug_sets.reserve(n);
    for (std::size_t m = 0; m < n; ++m) {
        // d d(m,i) / d row of Z_m = sum_aug_i / (k_m k'_i), identical per row.
        Vec acc(D, 0.0);
        double km = static_cast<double>(b.sets[m].z.rows);
        for (std::size_t i = 0; i < n; ++i) {
            double scale = g(m, i) / (km * static_cast<double>(b.aug_sets[i].z.rows));
            for (std::size_t d = 0; d < D; ++d) acc[d] += scale * pd.sum_aug[i][d];
        }
        Mat dm(b.sets[m].z.rows, D);
        for (std::size_t j = 0; j < dm.rows; ++j)
            std::copy(acc.begin(), acc.end(), dm.row(j));
        r.d_sets.push_back(std::move(dm));
    }
    for (std::size_t i = 0; i < n; ++i) {
        Vec acc(D, 0.0);
        double ki = static_cast<double>(b.aug_sets[i].z.rows);
        for (std::size_t m = 0; m < n; ++m) {
            double scale = g(m, i) / (ki * static_cast<double>(b.sets[m].z.rows));
            for (std::size_t d = 0; d < D; ++d) acc[d] += scale * pd.sum_sets[m][d];
        }
        Mat di(b.aug_sets[i].z.rows, D);
        for (std::size_t j = 0; j < di.rows; ++j)
            std::copy(acc.begin(), acc.end(), di.row(j));
        r.d_aug_sets.push_back(std::move(di));
    }
    return r;
}

struct ConsistencyLossResult {
    double value = 0.0;
    std::vector<GaussianGrad> d_gauss, d_aug_gauss;
};

// L_N = sum_i [ KL(g_i || g'_i) + KL(g'_i || g_i) ].
inline ConsistencyLossResult loss_consistency(const std::vector<GaussianEmbedding>& g,
                                              const std::vector<GaussianEmbedding>& g_aug) {
    if (g.empty() || g.size() != g_aug.size())
        throw std::invalid_argument("loss_consistency: need equal nonzero counts");
    ConsistencyLossResult r;
    r.d_gauss.reserve(g.size());
    r.d_aug_gauss.reserve(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        auto sd = symmetric_divergence(g[i], g_aug[i]);
        r.value += sd.value;
        r.d_gauss.push_back(std::move(sd.d_a));
        r.d_aug_gauss.push_back(std::move(sd.d_b));
    }
    return r;
}

// Exact average precision for query candidate (i, j), ranking all rows of the
// non-augmented sets (query included, self-similarity 1) by cosine, ties
// broken by ascending (instance, candidate) index. Non-differentiable; this
// is the oracle the histogram surrogate is checked against.
inline double exact_ap(const std::vector<CandidateSet>& sets, std::size_t i, std::size_t j) {
    if (sets.empty()) throw std::invalid_argument("exact_ap: empty batch");
    if (i >= sets.size() || j >= sets[i].z.rows)
        throw std::invalid_argument("exact_ap: query out of range");
    const std::size_t k = sets[i].z.rows;
    const double* q = sets[i].z.row(j);
    const std::size_t D = sets[i].z.cols;

    struct Entry {
        double sim;
        std::size_t flat;
        bool positive;
    };
    std::vector<Entry> pool;
    std::size_t flat = 0;
    for (std::size_t a = 0; a < sets.size(); ++a) {
        for (std::size_t c = 0; c < sets[a].z.rows; ++c, ++flat) {
            bool self = (a == i && c == j);
            double sim = self ? 1.0 : dot(q, sets[a].z.row(c), D);
            pool.push_back({sim, flat, a == i});
        }
    }
    std::sort(pool.begin(), pool.end(), [](const Entry& x, const Entry& y) {
        if (x.sim != y.sim) return x.sim > y.sim;
        return x.flat < y.flat;
    });
    double ap = 0.0;
    std::size_t positives_seen = 0;
    for (std::size_t rank = 0; rank < pool.size(); ++rank) {
        if (pool[rank].positive) {
            ++positives_seen;
            ap += static_cast<double>(positives_seen) / static_cast<double>(rank + 1);
        }
    }
    return ap / static_cast<double>(k);
}

namespace detail {

// Triangular-kernel assignment of one similarity to its (at most two)
// adjacent bin centers, with d(weight)/d(similarity); subgradient 0 exactly
// at kink points.
struct BinSpread {
    int b0 = -1, b1 = -1;
    double w0 = 0.0, w1 = 0.0;
    double g0 = 0.0, g1 = 0.0;
};

inline BinSpread kernel_spread(double s, int B) {
    BinSpread out;
    double half = static_cast<double>(B) / 2.0;  // dp/ds
    double p = (s + 1.0) * half;
    if (p <= -1.0 || p >= static_cast<double>(B) + 1.0) return out;
    if (p < 0.0) {  // below range: only the lowest kernel's rising edge
        out.b0 = 0;
        out.w0 = 1.0 + p;
        out.g0 = half;
        return out;
    }
    if (p > static_cast<double>(B)) {  // above range: only the top kernel's falling edge
        out.b0 = B;
        out.w0 = 1.0 - (p - static_cast<double>(B));
        out.g0 = -half;
        return out;
    }
    int l = static_cast<int>(p);  // p in [0, B]
    double frac = p - static_cast<double>(l);
    if (frac == 0.0) {  // exactly at a center: full weight, kink
        out.b0 = l;
        out.w0 = 1.0;
        return out;
    }
    out.b0 = l;
    out.w0 = 1.0 - frac;
    out.g0 = -half;
    out.b1 = l + 1;
    out.w1 = frac;
    out.g1 = half;
    return out;
}

struct HistogramApResult {
    double value = 0.0;
    Vec d_sim;  // dAP/ds per flat pool index (0 at the query itself)
};

// Histogram-quantized AP for query (i, j): soft counts h (all items) and
// h+ (items of instance i) per bin, cumulated from the most-similar bin
// downward; AP ~= (1/k) sum_b h+_b H+_b / H_b, empty bins contributing 0.
// The query's own similarity is identically 1 for unit rows, so its mass
// sits in the top bin as a constant with no gradient path.
inline HistogramApResult histogram_ap_impl(const std::vector<CandidateSet>& sets, std::size_t i,
                                           std::size_t j, const HistogramConfig& cfg,
                                           bool want_grad) {
    if (sets.empty()) throw std::invalid_argument("histogram_ap: empty batch");
    if (i >= sets.size() || j >= sets[i].z.rows)
        throw std::invalid_argument("histogram_ap: query out of range");
    validate(cfg);
    const int B = cfg.bins;
    const std::size_t D = sets[i].z.cols;
    const std::size_t k = sets[i].z.rows;
    const double* q = sets[i].z.row(j);

    std::size_t pool = 0;
    for (const auto& s : sets) pool += s.z.rows;

    Vec sims(pool, 0.0);
    std::vector<char> positive(pool, 0);
    std::size_t flat = 0, self_flat = 0;
    for (std::size_t a = 0; a < sets.size(); ++a)
        for (std::size_t c = 0; c < sets[a].z.rows; ++c, ++flat) {
            positive[flat] = (a == i);
            if (a == i && c == j) {
                self_flat = flat;
                continue;
            }
            sims[flat] = dot(q, sets[a].z.row(c), D);
        }

    Vec h(B + 1, 0.0), hp(B + 1, 0.0);
    h[B] += 1.0;  // the query itself
    hp[B] += 1.0;
    for (flat = 0; flat < pool; ++flat) {
        if (flat == self_flat) continue;
        auto sp = kernel_spread(sims[flat], B);
        if (sp.b0 >= 0) {
            h[sp.b0] += sp.w0;
            if (positive[flat]) hp[sp.b0] += sp.w0;
        }
        if (sp.b1 >= 0) {
            h[sp.b1] += sp.w1;
            if (positive[flat]) hp[sp.b1] += sp.w1;
        }
    }

    Vec H(B + 2, 0.0), Hp(B + 2, 0.0);  // suffix sums, H[b] = sum_{b' >= b}
    for (int b = B; b >= 0; --b) {
        H[b] = H[b + 1] + h[b];
        Hp[b] = Hp[b + 1] + hp[b];
    }
    HistogramApResult r;
    double inv_k = 1.0 / static_cast<double>(k);
    for (int b = 0; b <= B; ++b)
        if (H[b] > 0.0) r.value += hp[b] * Hp[b] / H[b];
    r.value *= inv_k;
    if (!want_grad) return r;

    // dAP/dh+_c = (1/k) [ H+_c/H_c + sum_{b<=c} h+_b/H_b ]  (mass-bearing bins),
    // dAP/dh_c  = -(1/k) sum_{b<=c} h+_b H+_b / H_b^2.
    Vec d_hp(B + 1, 0.0), d_h(B + 1, 0.0);
    double s1 = 0.0, s2 = 0.0;
    for (int b = 0; b <= B; ++b) {
        if (H[b] > 0.0) {
            s1 += hp[b] / H[b];
            s2 += hp[b] * Hp[b] / (H[b] * H[b]);
            d_hp[b] = inv_k * (Hp[b] / H[b] + s1);
        } else {
            d_hp[b] = inv_k * s1;
        }
        d_h[b] = -inv_k * s2;
    }

    r.d_sim = Vec(pool, 0.0);
    for (flat = 0; flat < pool; ++flat) {
        if (flat == self_flat) continue;
        auto sp = kernel_spread(sims[flat], B);
        double g = 0.0;
        if (sp.b0 >= 0) g += (d_h[sp.b0] + (positive[flat] ? d_hp[sp.b0] : 0.0)) * sp.g0;
        if (sp.b1 >= 0) g += (d_h[sp.b1] + (positive[flat] ? d_hp[sp.b1] : 0.0)) * sp.g1;
        r.d_sim[flat] = g;
    }
    return r;
}

}  // namespace detail

inline double histogram_ap(const std::vector<CandidateSet>& sets, std::size_t i, std::size_t j,
                           const HistogramConfig& cfg) {
    return detail::histogram_ap_impl(sets, i, j, cfg, false).value;
}

// Batch views: ranking always runs over the non-augmented sets.
inline double exact_ap(const BatchCandidates& b, std::size_t i, std::size_t j) {
    return exact_ap(b.sets, i, j);
}

inline double histogram_ap(const BatchCandidates& b, std::size_t i, std::size_t j,
                           const HistogramConfig& cfg) {
    return histogram_ap(b.sets, i, j, cfg);
}

struct RankingLossResult {
    double value = 0.0;
    std::vector<Mat> d_sets;  // per-row gradients on the non-augmented sets
};

// L_R = 1 - mean histogram AP over every candidate of every set.
inline RankingLossResult loss_ranking(const std::vector<CandidateSet>& sets,
                                      const HistogramConfig& cfg, bool want_grad = true) {
    if (sets.empty()) throw std::invalid_argument("loss_ranking: empty batch");
    validate(cfg);
    const std::size_t n = sets.size();
    const std::size_t D = sets.front().z.cols;

    RankingLossResult r;
    if (want_grad) {
        r.d_sets.reserve(n);
        for (const auto& s : sets) r.d_sets.emplace_back(s.z.rows, D, 0.0);
    }

    std::size_t queries = 0;
    double mean_ap = 0.0;
    for (std::size_t i = 0; i < n; ++i) queries += sets[i].z.rows;
    const double d_loss_d_ap = -1.0 / static_cast<double>(queries);

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < sets[i].z.rows; ++j) {
            auto ap = detail::histogram_ap_impl(sets, i, j, cfg, want_grad);
            mean_ap += ap.value;
            if (!want_grad) continue;
            const double* q = sets[i].z.row(j);
            double* dq = r.d_sets[i].row(j);
            std::size_t flat = 0;
            for (std::size_t a = 0; a < n; ++a) {
                for (std::size_t c = 0; c < sets[a].z.rows; ++c, ++flat) {
                    double g = ap.d_sim[flat] * d_loss_d_ap;
                    if (g == 0.0) continue;
                    const double* t = sets[a].z.row(c);
                    double* dt = r.d_sets[a].row(c);
                    for (std::size_t d = 0; d < D; ++d) {
                        dt[d] += g * q[d];
                        dq[d] += g * t[d];
                    }
                }
            }
        }
    }
    mean_ap /= static_cast<double>(queries);
    r.value = std::max(0.0, 1.0 - mean_ap);
    return r;
}

struct LossGrads {
    std::vector<Mat> d_sets, d_aug_sets;
    std::vector<GaussianGrad> d_gauss, d_aug_gauss;
};

struct LossReport {
    double l_s = 0.0, l_n = 0.0, l_r = 0.0, total = 0.0;
    LossGrads grads;
};

// L = L_S + lambda_n L_N + lambda_r L_R. Terms with zero weight are skipped
// entirely: their reported component is 0 and they contribute no gradient.
inline LossReport total_loss(const BatchCandidates& batch,
                             const std::vector<GaussianEmbedding>& g,
                             const std::vector<GaussianEmbedding>& g_aug, double tau,
                             double lambda_n, double lambda_r, const HistogramConfig& hist) {
    validate(batch);
    if (lambda_n < 0.0 || lambda_r < 0.0)
        throw std::invalid_argument("total_loss: loss weights must be non-negative");
    const std::size_t n = batch.sets.size();
    if (g.size() != n || g_aug.size() != n)
        throw std::invalid_argument("total_loss: embeddings must align with the batch");

    LossReport rep;
    auto soft = loss_softmax(batch, tau);
    rep.l_s = soft.value;
    rep.grads.d_sets = std::move(soft.d_sets);
    rep.grads.d_aug_sets = std::move(soft.d_aug_sets);

    const std::size_t D = batch.sets.front().z.cols;
    rep.grads.d_gauss.assign(n, zero_grad(g.front().dim()));
    rep.grads.d_aug_gauss.assign(n, zero_grad(g.front().dim()));

    if (lambda_n > 0.0) {
        auto cons = loss_consistency(g, g_aug);
        rep.l_n = cons.value;
        for (std::size_t i = 0; i < n; ++i) {
            accumulate(rep.grads.d_gauss[i], cons.d_gauss[i], lambda_n);
            accumulate(rep.grads.d_aug_gauss[i], cons.d_aug_gauss[i], lambda_n);
        }
    }
    if (lambda_r > 0.0) {
        auto rank = loss_ranking(batch.sets, hist);
        rep.l_r = rank.value;
        for (std::size_t i = 0; i < n; ++i) {
            Mat& dst = rep.grads.d_sets[i];
            const Mat& src = rank.d_sets[i];
            for (std::size_t e = 0; e < dst.data.size(); ++e) dst.data[e] += lambda_r * src.data[e];
        }
        (void)D;
    }
    rep.total = rep.l_s + lambda_n * rep.l_n + lambda_r * rep.l_r;
    return rep;
}

}  // namespace umm
