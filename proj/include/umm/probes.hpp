#pragma once

#include "training.hpp"

namespace umm {

// Deviation bound sqrt( (kl_qp + ln(2 sqrt(n) / delta)) / (2n) ): the
// high-probability gap between empirical and true risk at sample count n.
inline double pac_bayes_bound(double kl_qp, std::size_t n, double delta) {
    if (!(kl_qp >= 0.0)) throw std::invalid_argument("pac_bayes_bound: kl must be non-negative");
    if (n == 0) throw std::invalid_argument("pac_bayes_bound: n must be positive");
    if (!(delta > 0.0) || delta > 1.0)
        throw std::invalid_argument("pac_bayes_bound: delta must be in (0, 1]");
    double nn = static_cast<double>(n);
    return std::sqrt((kl_qp + std::log(2.0 * std::sqrt(nn) / delta)) / (2.0 * nn));
}

// The same bound on the squared deviation.
inline double pac_bayes_bound_squared(double kl_qp, std::size_t n, double delta) {
    double b = pac_bayes_bound(kl_qp, n, delta);
    return b * b;
}

enum class OutlierMode { near_duplicate_cross_class, intra_class_divergent, both };

struct OutlierDatasetConfig {
    std::size_t classes = 10;
    std::size_t per_class = 100;
    std::size_t input_dim = 16;
    double class_separation = 4.0;     // pairwise distance between class centers
    double outlier_fraction = 0.1;
    OutlierMode outlier_mode = OutlierMode::both;
    std::uint64_t seed = 1;
};

inline void validate(const OutlierDatasetConfig& c) {
    if (c.classes == 0 || c.per_class == 0 || c.input_dim == 0)
        throw std::invalid_argument("OutlierDatasetConfig: counts must be positive");
    if (c.classes > c.input_dim + 1)
        throw std::invalid_argument(
            "OutlierDatasetConfig: impossible geometry, an equidistant simplex of C classes "
            "needs input_dim >= C - 1");
    if (!(c.class_separation > 0.0))
        throw std::invalid_argument("OutlierDatasetConfig: class_separation must be positive");
    if (c.outlier_fraction < 0.0 || c.outlier_fraction > 1.0)
        throw std::invalid_argument("OutlierDatasetConfig: outlier_fraction must be in [0, 1]");
    if (c.outlier_mode != OutlierMode::intra_class_divergent && c.classes < 2 &&
        c.outlier_fraction > 0.0)
        throw std::invalid_argument(
            "OutlierDatasetConfig: cross-class outliers need at least 2 classes");
}

namespace detail {

// C equidistant points (pairwise distance `separation`) in R^dim, via the
// orthonormal Helmert basis of the sum-zero subspace spanned by the
// differences of C standard basis vectors.
inline Mat simplex_centers(std::size_t C, std::size_t dim, double separation) {
    Mat centers(C, dim, 0.0);
    double scale = separation / std::sqrt(2.0);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k + 1 < C; ++k) {
            double kk = static_cast<double>(k + 1);
            double denom = std::sqrt(kk * (kk + 1.0));
            double v = 0.0;
            if (c <= k)
                v = 1.0 / denom;
            else if (c == k + 1)
                v = -kk / denom;
            centers(c, k) = scale * v;
        }
    return centers;
}

}  // namespace detail

// Gaussian class blobs on a simplex, with a controlled fraction of the two
// outlier pathologies: near-duplicate pairs straddling two classes, and
// same-class points thrown far outside their blob. Flags mark outliers for
// diagnostics; training never sees them.
inline Dataset make_outlier_dataset(const OutlierDatasetConfig& cfg) {
    validate(cfg);
    const std::size_t C = cfg.classes, P = cfg.per_class, dim = cfg.input_dim;
    const double s = cfg.class_separation;
    const double sigma_w = 0.5 * s / std::sqrt(static_cast<double>(dim));
    Mat centers = detail::simplex_centers(C, dim, s);

    Rng rng(splitmix64(cfg.seed));
    Dataset ds;
    ds.x = Mat(C * P, dim);
    ds.labels.resize(C * P);
    ds.outlier_flags.assign(C * P, 0);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p) {
            std::size_t row = c * P + p;
            ds.labels[row] = static_cast<int>(c);
            Vec noise = rng.normal_vec(dim);
            for (std::size_t d = 0; d < dim; ++d)
                ds.x(row, d) = centers(c, d) + sigma_w * noise[d];
        }

    const std::size_t total = C * P;
    std::size_t budget = static_cast<std::size_t>(std::llround(cfg.outlier_fraction * total));
    std::size_t near_points = 0, far_points = 0;
    switch (cfg.outlier_mode) {
        case OutlierMode::near_duplicate_cross_class: near_points = budget; break;
        case OutlierMode::intra_class_divergent: far_points = budget; break;
        case OutlierMode::both:
            near_points = budget / 2;
            far_points = budget - (near_points / 2) * 2;
            break;
    }

    // Victims are taken from the tail of each class, so indices never collide.
    std::vector<std::size_t> next_victim(C, P);
    auto take_victim = [&](std::size_t c) -> std::ptrdiff_t {
        if (next_victim[c] == 0) return -1;
        return static_cast<std::ptrdiff_t>(c * P + --next_victim[c]);
    };

    std::size_t pairs = near_points / 2;
    for (std::size_t p = 0; p < pairs; ++p) {
        std::size_t a = p % C, b = (p + 1) % C;
        std::ptrdiff_t ra = take_victim(a), rb = take_victim(b);
        if (ra < 0 || rb < 0) break;
        Vec jitter = rng.normal_vec(dim);
        Vec dir = rng.unit_vec(dim);
        double r = 0.025 * s * rng.uniform01();  // pair ends up within 0.05·separation
        for (std::size_t d = 0; d < dim; ++d) {
            double q = 0.5 * (centers(a, d) + centers(b, d)) + sigma_w * jitter[d];
            ds.x(ra, d) = q + r * dir[d];
            ds.x(rb, d) = q - r * dir[d];
        }
        ds.outlier_flags[ra] = 1;
        ds.outlier_flags[rb] = 1;
    }
    for (std::size_t t = 0; t < far_points; ++t) {
        std::size_t c = t % C;
        std::ptrdiff_t rc = take_victim(c);
        if (rc < 0) break;
        Vec dir = rng.unit_vec(dim);
        for (std::size_t d = 0; d < dim; ++d) ds.x(rc, d) = centers(c, d) + 2.0 * s * dir[d];
        ds.outlier_flags[rc] = 1;
    }
    return ds;
}

struct VanishingReport {
    double p_duplicate = 0.0;
    double grad_norm_point = 0.0;       // full softmax-term gradient at the duplicate anchor
    double grad_norm_set = 0.0;         // same anchor, k sampled candidates per instance
    double ratio = 0.0;                 // grad_norm_set / max(grad_norm_point, 1e-30)
    double pair_grad_norm_point = 0.0;  // attractive (positive-pair) component alone
    double pair_grad_norm_set = 0.0;
    double batch_grad_norm_mean = 0.0;  // mean full gradient over non-duplicate anchors
    double tau = 0.0;
    std::size_t n = 0;
    std::size_t k = 0;
};

namespace detail {

struct AnchorGrads {
    double p_positive = 0.0;
    double full_norm = 0.0;
    double pair_norm = 0.0;
};

// Softmax matching term for one anchor with the denominator running over all
// instances except the anchor itself: loss = -log P(positive | anchor).
// Returns the gradient norms w.r.t. the anchor's mean, both for the full
// term and for the attract-toward-positive component alone.
inline AnchorGrads anchor_term_grads(const std::vector<CandidateSet>& sets,
                                     const std::vector<GaussianEmbedding>& gauss,
                                     std::size_t anchor, std::size_t positive, double tau) {
    const std::size_t n = sets.size();
    const std::size_t D = sets[anchor].z.cols;
    const std::size_t kj = sets[anchor].z.rows;

    Vec d(n, 0.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < n; ++m) {
        if (m == anchor) continue;
        d[m] = set_distance(sets[m], sets[anchor]);
        mx = std::max(mx, d[m]);
    }
    double z = 0.0;
    Vec p(n, 0.0);
    for (std::size_t m = 0; m < n; ++m) {
        if (m == anchor) continue;
        p[m] = std::exp((d[m] - mx) / tau);
        z += p[m];
    }
    for (std::size_t m = 0; m < n; ++m) p[m] /= z;

    AnchorGrads out;
    out.p_positive = p[positive];

    // All rows of the anchor's set share the same distance gradient.
    Vec row_full(D, 0.0), row_pair(D, 0.0);
    for (std::size_t m = 0; m < n; ++m) {
        if (m == anchor) continue;
        Vec cs = column_sum(sets[m].z);
        double coeff = (p[m] - (m == positive ? 1.0 : 0.0)) / tau /
                       (static_cast<double>(sets[m].z.rows) * static_cast<double>(kj));
        for (std::size_t dd = 0; dd < D; ++dd) row_full[dd] += coeff * cs[dd];
        if (m == positive) {
            double pc = (p[m] - 1.0) / tau /
                        (static_cast<double>(sets[m].z.rows) * static_cast<double>(kj));
            for (std::size_t dd = 0; dd < D; ++dd) row_pair[dd] += pc * cs[dd];
        }
    }
    Mat d_rows_full(kj, D), d_rows_pair(kj, D);
    for (std::size_t r = 0; r < kj; ++r) {
        std::copy(row_full.begin(), row_full.end(), d_rows_full.row(r));
        std::copy(row_pair.begin(), row_pair.end(), d_rows_pair.row(r));
    }
    GaussianGrad gf = candidate_backward(gauss[anchor], sets[anchor], d_rows_full);
    GaussianGrad gp = candidate_backward(gauss[anchor], sets[anchor], d_rows_pair);
    out.full_norm = norm2(gf.d_mu.data(), D);
    out.pair_norm = norm2(gp.d_mu.data(), D);
    return out;
}

}  // namespace detail

// Builds a batch of paired instances — pair (0, 1) with identical features,
// the rest independent — and measures the matching-term gradient received by
// the duplicate anchor in the single-point regime versus the sampled-set
// regime (k candidates at spread sigma_scale). sigma_scale = 0 with k = 1
// reproduces the point computation identically.
inline VanishingReport vanishing_probe(std::size_t n, double tau, std::size_t k,
                                       double sigma_scale, std::uint64_t seed,
                                       std::size_t dim = 32) {
    if (n < 2) throw std::invalid_argument("vanishing_probe: n must be >= 2");
    if (!(tau > 0.0)) throw std::invalid_argument("vanishing_probe: tau must be positive");
    if (k == 0) throw std::invalid_argument("vanishing_probe: k must be positive");
    if (sigma_scale < 0.0) throw std::invalid_argument("vanishing_probe: sigma_scale must be >= 0");

    Rng rng(splitmix64(seed));
    std::vector<Vec> mu(n);
    for (std::size_t i = 0; i < n; ++i) mu[i] = rng.unit_vec(dim);
    mu[1] = mu[0];  // the duplicated pair

    double lv = sigma_scale > 0.0 ? clamp_log_var(2.0 * std::log(sigma_scale)) : kLogVarMin;
    std::vector<GaussianEmbedding> point_gauss, set_gauss;
    std::vector<CandidateSet> point_sets, set_sets;
    for (std::size_t i = 0; i < n; ++i) {
        point_gauss.emplace_back(mu[i], Vec(dim, kLogVarMin));
        point_sets.push_back(
            sample_candidates(point_gauss.back(), 1, Mat(1, dim, 0.0), static_cast<int>(i)));
        set_gauss.emplace_back(mu[i], Vec(dim, lv));
        Mat noise = sigma_scale > 0.0 ? rng.normal_mat(k, dim) : Mat(k, dim, 0.0);
        set_sets.push_back(
            sample_candidates(set_gauss.back(), k, noise, static_cast<int>(i)));
    }

    VanishingReport rep;
    rep.tau = tau;
    rep.n = n;
    rep.k = k;

    auto dup_point = detail::anchor_term_grads(point_sets, point_gauss, 1, 0, tau);
    auto dup_set = detail::anchor_term_grads(set_sets, set_gauss, 1, 0, tau);
    rep.p_duplicate = dup_point.p_positive;
    rep.grad_norm_point = dup_point.full_norm;
    rep.grad_norm_set = dup_set.full_norm;
    rep.pair_grad_norm_point = dup_point.pair_norm;
    rep.pair_grad_norm_set = dup_set.pair_norm;
    rep.ratio = rep.grad_norm_set / std::max(rep.grad_norm_point, 1e-30);

    // Remaining instances pair up (2,3), (4,5), ... as ordinary positives.
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 2; j < n; ++j) {
        std::size_t partner = j ^ 1u;
        if (partner >= n || partner < 2) continue;
        acc += detail::anchor_term_grads(point_sets, point_gauss, j, partner, tau).full_norm;
        ++count;
    }
    rep.batch_grad_norm_mean = count ? acc / static_cast<double>(count) : 0.0;
    return rep;
}

}  // namespace umm
