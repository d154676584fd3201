#pragma once

#include <algorithm>

#include "core.hpp"

namespace umm {

// log-variance clamp keeping exp() well-conditioned in both directions.
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 4.0;

inline double clamp_log_var(double lv) { return std::clamp(lv, kLogVarMin, kLogVarMax); }

// Diagonal Gaussian over embedding space, parameterized by mean and
// log-variance. Construction clamps log-variances into the legal band.
struct GaussianEmbedding {
    Vec mu;
    Vec log_var;

    GaussianEmbedding() = default;
    GaussianEmbedding(Vec m, Vec lv) : mu(std::move(m)), log_var(std::move(lv)) {
        if (mu.empty() || mu.size() != log_var.size())
            throw std::invalid_argument("GaussianEmbedding: mu and log_var need equal nonzero length");
        for (double& v : log_var) v = clamp_log_var(v);
    }

    std::size_t dim() const { return mu.size(); }

    Vec sigma() const {
        Vec s(log_var.size());
        for (std::size_t d = 0; d < s.size(); ++d) s[d] = std::exp(0.5 * log_var[d]);
        return s;
    }
};

// Mixture of diagonal Gaussians with uniform component weights 1/C.
struct MixtureEmbedding {
    std::vector<GaussianEmbedding> components;

    MixtureEmbedding() = default;
    explicit MixtureEmbedding(std::vector<GaussianEmbedding> c) : components(std::move(c)) {
        if (components.empty())
            throw std::invalid_argument("MixtureEmbedding: needs at least one component");
        for (const auto& g : components)
            if (g.dim() != components.front().dim())
                throw std::invalid_argument("MixtureEmbedding: components must share dimension");
    }

    std::size_t dim() const { return components.front().dim(); }
    double weight() const { return 1.0 / static_cast<double>(components.size()); }
};

// k unit-normalized candidate rows drawn from one instance's distribution.
// raw/norms/noise retain the sampling path so downstream losses can push
// gradients back to mu and log_var through the normalization.
struct CandidateSet {
    Mat z;                       // k x D, unit rows
    int source_index = -1;
    Mat raw;                     // pre-normalization vectors mu + sigma*eps
    Vec norms;                   // per-row normalization factors
    Mat noise;                   // the standard-normal draws used
    std::vector<int> component;  // mixture component per row; empty for plain Gaussians
};

inline CandidateSet sample_candidates(const GaussianEmbedding& g, std::size_t k, const Mat& noise,
                                      int source_index = -1) {
    if (k == 0) throw std::invalid_argument("sample_candidates: k must be positive");
    if (!all_finite(g.mu) || !all_finite(g.log_var))
        throw std::invalid_argument("sample_candidates: non-finite embedding parameters");
    const std::size_t D = g.dim();
    if (noise.rows != k || noise.cols != D)
        throw std::invalid_argument("sample_candidates: noise must be k x D");

    CandidateSet cs;
    cs.source_index = source_index;
    cs.z = Mat(k, D);
    cs.raw = Mat(k, D);
    cs.norms = Vec(k);
    cs.noise = noise;
    const Vec sig = g.sigma();
    for (std::size_t j = 0; j < k; ++j) {
        double* raw = cs.raw.row(j);
        const double* eps = noise.row(j);
        for (std::size_t d = 0; d < D; ++d) raw[d] = g.mu[d] + sig[d] * eps[d];
        double n = norm2(raw, D);
        if (!(n > 0.0)) throw std::invalid_argument("sample_candidates: zero-norm sample");
        cs.norms[j] = n;
        double* z = cs.z.row(j);
        for (std::size_t d = 0; d < D; ++d) z[d] = raw[d] / n;
    }
    return cs;
}

// Candidates from a mixture: caller supplies the categorical component draw
// for each row (uniform weights), keeping the operation deterministic.
inline CandidateSet sample_mixture(const MixtureEmbedding& m, std::size_t k, const Mat& noise,
                                   const std::vector<int>& component_draws, int source_index = -1) {
    if (k == 0) throw std::invalid_argument("sample_mixture: k must be positive");
    if (component_draws.size() != k)
        throw std::invalid_argument("sample_mixture: need one component draw per row");
    const std::size_t D = m.dim();
    if (noise.rows != k || noise.cols != D)
        throw std::invalid_argument("sample_mixture: noise must be k x D");

    CandidateSet cs;
    cs.source_index = source_index;
    cs.z = Mat(k, D);
    cs.raw = Mat(k, D);
    cs.norms = Vec(k);
    cs.noise = noise;
    cs.component = component_draws;
    for (std::size_t j = 0; j < k; ++j) {
        int c = component_draws[j];
        if (c < 0 || static_cast<std::size_t>(c) >= m.components.size())
            throw std::invalid_argument("sample_mixture: component draw out of range");
        const GaussianEmbedding& g = m.components[static_cast<std::size_t>(c)];
        if (!all_finite(g.mu) || !all_finite(g.log_var))
            throw std::invalid_argument("sample_mixture: non-finite component parameters");
        const Vec sig = g.sigma();
        double* raw = cs.raw.row(j);
        const double* eps = noise.row(j);
        for (std::size_t d = 0; d < D; ++d) raw[d] = g.mu[d] + sig[d] * eps[d];
        double n = norm2(raw, D);
        if (!(n > 0.0)) throw std::invalid_argument("sample_mixture: zero-norm sample");
        cs.norms[j] = n;
        double* z = cs.z.row(j);
        for (std::size_t d = 0; d < D; ++d) z[d] = raw[d] / n;
    }
    return cs;
}

struct GaussianGrad {
    Vec d_mu, d_log_var;
};

inline GaussianGrad zero_grad(std::size_t dim) { return GaussianGrad{Vec(dim, 0.0), Vec(dim, 0.0)}; }

inline void accumulate(GaussianGrad& g, const GaussianGrad& other, double scale = 1.0) {
    for (std::size_t d = 0; d < g.d_mu.size(); ++d) {
        g.d_mu[d] += scale * other.d_mu[d];
        g.d_log_var[d] += scale * other.d_log_var[d];
    }
}

// Pulls per-row gradients back through normalization and the
// reparameterization z = normalize(mu + exp(log_var/2) * eps):
//   d_raw = (d_z - z (z . d_z)) / ||raw||,   d_mu += d_raw,
//   d_log_var += d_raw * eps * sigma / 2.
inline GaussianGrad candidate_backward(const GaussianEmbedding& g, const CandidateSet& cs,
                                       const Mat& d_rows) {
    const std::size_t k = cs.z.rows, D = cs.z.cols;
    if (d_rows.rows != k || d_rows.cols != D)
        throw std::invalid_argument("candidate_backward: gradient shape mismatch");
    if (!cs.component.empty())
        throw std::invalid_argument("candidate_backward: mixture sets are not differentiated");
    GaussianGrad out = zero_grad(D);
    const Vec sig = g.sigma();
    for (std::size_t j = 0; j < k; ++j) {
        const double* z = cs.z.row(j);
        const double* gz = d_rows.row(j);
        const double* eps = cs.noise.row(j);
        double zg = dot(z, gz, D);
        double inv_n = 1.0 / cs.norms[j];
        for (std::size_t d = 0; d < D; ++d) {
            double d_raw = (gz[d] - z[d] * zg) * inv_n;
            out.d_mu[d] += d_raw;
            out.d_log_var[d] += d_raw * eps[d] * 0.5 * sig[d];
        }
    }
    return out;
}

struct KlResult {
    double value = 0.0;
    GaussianGrad d_i, d_j;
};

// KL(N_i || N_j) for diagonal Gaussians in log-variance form:
//   1/2 sum_d [ lv_j - lv_i - 1 + exp(lv_i - lv_j) + (mu_j - mu_i)^2 exp(-lv_j) ]
inline KlResult kl_divergence(const GaussianEmbedding& gi, const GaussianEmbedding& gj) {
    if (gi.dim() != gj.dim()) throw std::invalid_argument("kl_divergence: dimension mismatch");
    const std::size_t D = gi.dim();
    KlResult r;
    r.d_i = zero_grad(D);
    r.d_j = zero_grad(D);
    for (std::size_t d = 0; d < D; ++d) {
        double dlv = gi.log_var[d] - gj.log_var[d];
        double ratio = std::exp(dlv);                 // sigma_i^2 / sigma_j^2
        double inv_vj = std::exp(-gj.log_var[d]);     // 1 / sigma_j^2
        double dm = gj.mu[d] - gi.mu[d];
        r.value += 0.5 * (-dlv - 1.0 + ratio + dm * dm * inv_vj);
        r.d_i.d_mu[d] = -dm * inv_vj;
        r.d_j.d_mu[d] = dm * inv_vj;
        r.d_i.d_log_var[d] = 0.5 * (ratio - 1.0);
        r.d_j.d_log_var[d] = 0.5 * (1.0 - ratio - dm * dm * inv_vj);
    }
    return r;
}

struct SymmetricDivergenceResult {
    double value = 0.0;
    GaussianGrad d_a, d_b;
};

// KL(a||b) + KL(b||a), evaluated in a form whose float operations are
// commutative in (a, b), so swapping arguments reproduces the value exactly.
inline SymmetricDivergenceResult symmetric_divergence(const GaussianEmbedding& ga,
                                                      const GaussianEmbedding& gb) {
    if (ga.dim() != gb.dim()) throw std::invalid_argument("symmetric_divergence: dimension mismatch");
    const std::size_t D = ga.dim();
    SymmetricDivergenceResult r;
    r.d_a = zero_grad(D);
    r.d_b = zero_grad(D);
    for (std::size_t d = 0; d < D; ++d) {
        double eab = std::exp(ga.log_var[d] - gb.log_var[d]);
        double eba = std::exp(gb.log_var[d] - ga.log_var[d]);
        double inv_va = std::exp(-ga.log_var[d]);
        double inv_vb = std::exp(-gb.log_var[d]);
        double dm = ga.mu[d] - gb.mu[d];
        r.value += 0.5 * ((eab + eba) - 2.0 + dm * dm * (inv_va + inv_vb));
        r.d_a.d_mu[d] = dm * (inv_va + inv_vb);
        r.d_b.d_mu[d] = -dm * (inv_va + inv_vb);
        r.d_a.d_log_var[d] = 0.5 * (eab - eba - dm * dm * inv_va);
        r.d_b.d_log_var[d] = 0.5 * (eba - eab - dm * dm * inv_vb);
    }
    return r;
}

}  // namespace umm
