#pragma once

#include <string>

#include "distributions.hpp"

namespace umm {

struct DenseLayer {
    Mat W;  // out x in
    Vec b;
};

// Small feed-forward encoder: tanh trunk, then two affine heads mapping the
// last hidden layer to the mean and to the log-variance (clamped to the
// range the distributions accept).
struct EncoderModel {
    std::vector<DenseLayer> trunk;
    DenseLayer mu_head;
    DenseLayer log_var_head;

    std::size_t input_dim() const {
        return trunk.empty() ? mu_head.W.cols : trunk.front().W.cols;
    }
    std::size_t embed_dim() const { return mu_head.W.rows; }
};

namespace detail {

inline DenseLayer xavier_layer(std::size_t out, std::size_t in, Rng& rng) {
    DenseLayer l;
    l.W = Mat(out, in);
    l.b = Vec(out, 0.0);
    double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& w : l.W.data) w = (2.0 * rng.uniform01() - 1.0) * limit;
    return l;
}

}  // namespace detail

inline EncoderModel init_encoder(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                 std::size_t embed_dim, Rng& rng) {
    if (input_dim == 0 || embed_dim == 0)
        throw std::invalid_argument("init_encoder: dimensions must be positive");
    for (std::size_t h : hidden)
        if (h == 0) throw std::invalid_argument("init_encoder: hidden sizes must be positive");
    EncoderModel m;
    std::size_t prev = input_dim;
    for (std::size_t h : hidden) {
        m.trunk.push_back(detail::xavier_layer(h, prev, rng));
        prev = h;
    }
    m.mu_head = detail::xavier_layer(embed_dim, prev, rng);
    m.log_var_head = detail::xavier_layer(embed_dim, prev, rng);
    return m;
}

// Same shapes, all parameters zero — gradient and momentum buffers.
inline EncoderModel zeros_like(const EncoderModel& m) {
    EncoderModel z = m;
    for (auto& l : z.trunk) {
        l.W.fill(0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    for (DenseLayer* l : {&z.mu_head, &z.log_var_head}) {
        l->W.fill(0.0);
        std::fill(l->b.begin(), l->b.end(), 0.0);
    }
    return z;
}

// Activations recorded by encode() for the manual backward pass.
struct ForwardCache {
    Vec input;
    std::vector<Vec> post;  // tanh output of each trunk layer
    Vec log_var_pre;        // head output before clamping
};

namespace detail {

inline Vec affine(const DenseLayer& l, const Vec& h) {
    Vec out(l.W.rows);
    for (std::size_t r = 0; r < l.W.rows; ++r) out[r] = l.b[r] + dot(l.W.row(r), h.data(), l.W.cols);
    return out;
}

}  // namespace detail

inline GaussianEmbedding encode(const EncoderModel& m, const Vec& x, ForwardCache* cache = nullptr) {
    if (x.size() != m.input_dim()) throw std::invalid_argument("encode: input dimension mismatch");
    if (cache) {
        cache->input = x;
        cache->post.clear();
    }
    Vec h = x;
    for (const auto& l : m.trunk) {
        h = detail::affine(l, h);
        for (double& v : h) v = std::tanh(v);
        if (cache) cache->post.push_back(h);
    }
    Vec mu = detail::affine(m.mu_head, h);
    Vec lv = detail::affine(m.log_var_head, h);
    if (cache) cache->log_var_pre = lv;
    for (double& v : lv) v = clamp_log_var(v);
    return GaussianEmbedding(std::move(mu), std::move(lv));
}

// Accumulates d(loss)/d(parameters) into `grads` (shapes of the model) given
// upstream gradients on the embedding. Gradients do not pass the clamp where
// the raw log-variance fell outside the admitted range.
inline void encoder_backward(const EncoderModel& m, const ForwardCache& cache, const Vec& d_mu,
                             const Vec& d_log_var, EncoderModel& grads) {
    const std::size_t D = m.embed_dim();
    if (d_mu.size() != D || d_log_var.size() != D)
        throw std::invalid_argument("encoder_backward: gradient dimension mismatch");
    const Vec& h_last = m.trunk.empty() ? cache.input : cache.post.back();

    Vec d_h(h_last.size(), 0.0);
    for (std::size_t r = 0; r < D; ++r) {
        double g_lv = d_log_var[r];
        if (cache.log_var_pre[r] < kLogVarMin || cache.log_var_pre[r] > kLogVarMax) g_lv = 0.0;
        double g_mu = d_mu[r];
        double* gw_mu = grads.mu_head.W.row(r);
        double* gw_lv = grads.log_var_head.W.row(r);
        const double* wm = m.mu_head.W.row(r);
        const double* wl = m.log_var_head.W.row(r);
        for (std::size_t c = 0; c < h_last.size(); ++c) {
            gw_mu[c] += g_mu * h_last[c];
            gw_lv[c] += g_lv * h_last[c];
            d_h[c] += g_mu * wm[c] + g_lv * wl[c];
        }
        grads.mu_head.b[r] += g_mu;
        grads.log_var_head.b[r] += g_lv;
    }

    for (std::size_t li = m.trunk.size(); li-- > 0;) {
        const DenseLayer& l = m.trunk[li];
        const Vec& post = cache.post[li];
        const Vec& h_in = (li == 0) ? cache.input : cache.post[li - 1];
        Vec d_in(h_in.size(), 0.0);
        DenseLayer& gl = grads.trunk[li];
        for (std::size_t r = 0; r < l.W.rows; ++r) {
            double g_pre = d_h[r] * (1.0 - post[r] * post[r]);
            if (g_pre == 0.0) continue;
            double* gw = gl.W.row(r);
            const double* w = l.W.row(r);
            for (std::size_t c = 0; c < h_in.size(); ++c) {
                gw[c] += g_pre * h_in[c];
                d_in[c] += g_pre * w[c];
            }
            gl.b[r] += g_pre;
        }
        d_h = std::move(d_in);
    }
}

// Named, shape-tagged views over every parameter tensor, in a fixed order —
// the basis for optimizer updates and checkpoint serialization.
struct TensorRef {
    std::string name;
    std::vector<std::size_t> shape;
    double* data;
    std::size_t size;
};

struct ConstTensorRef {
    std::string name;
    std::vector<std::size_t> shape;
    const double* data;
    std::size_t size;
};

inline std::vector<TensorRef> tensors(EncoderModel& m) {
    std::vector<TensorRef> out;
    for (std::size_t i = 0; i < m.trunk.size(); ++i) {
        std::string base = "trunk" + std::to_string(i);
        out.push_back({base + ".W", {m.trunk[i].W.rows, m.trunk[i].W.cols}, m.trunk[i].W.data.data(),
                       m.trunk[i].W.data.size()});
        out.push_back({base + ".b", {m.trunk[i].b.size()}, m.trunk[i].b.data(), m.trunk[i].b.size()});
    }
    out.push_back({"mu.W", {m.mu_head.W.rows, m.mu_head.W.cols}, m.mu_head.W.data.data(),
                   m.mu_head.W.data.size()});
    out.push_back({"mu.b", {m.mu_head.b.size()}, m.mu_head.b.data(), m.mu_head.b.size()});
    out.push_back({"logvar.W", {m.log_var_head.W.rows, m.log_var_head.W.cols},
                   m.log_var_head.W.data.data(), m.log_var_head.W.data.size()});
    out.push_back({"logvar.b", {m.log_var_head.b.size()}, m.log_var_head.b.data(),
                   m.log_var_head.b.size()});
    return out;
}

inline std::vector<ConstTensorRef> tensors(const EncoderModel& m) {
    std::vector<ConstTensorRef> out;
    for (const auto& t : tensors(const_cast<EncoderModel&>(m)))
        out.push_back({t.name, t.shape, t.data, t.size});
    return out;
}

inline std::size_t parameter_count(const EncoderModel& m) {
    std::size_t n = 0;
    for (const auto& t : tensors(m)) n += t.size;
    return n;
}

inline bool all_parameters_finite(const EncoderModel& m) {
    for (const auto& t : tensors(m))
        for (std::size_t i = 0; i < t.size; ++i)
            if (!std::isfinite(t.data[i])) return false;
    return true;
}

}  // namespace umm
