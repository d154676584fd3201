#pragma once

#include <functional>
#include <optional>

#include "encoder.hpp"
#include "evaluation.hpp"
#include "losses.hpp"
#include "schedule.hpp"

namespace umm {

struct OptimizerConfig {
    double momentum = 0.9;
    double learning_rate = 0.06;
    // Absolute factors applied to the base rate from each milestone epoch on.
    std::vector<int> decay_milestones = {60, 120, 160};
    std::vector<double> decay_factors = {0.5, 0.1, 0.05};
};

struct AugmentConfig {
    double noise_std = 0.1;
    double dropout_prob = 0.1;
};

struct TrainConfig {
    std::size_t d = 32;
    double tau = 0.1;
    double lambda_n = 10.0;
    double lambda_r = 10.0;
    std::size_t batch_size = 64;
    int epochs = 200;
    int hist_bins = 20;
    std::uint64_t seed = 1;
    std::vector<std::size_t> hidden = {256, 128};
    SFDSchedule sfd = default_sfd();
    OptimizerConfig optimizer;
    AugmentConfig augmentation;
    // Point-embedding baseline: log-variance pinned at the floor, one
    // candidate per view, no sampling noise. The log-variance head is frozen.
    bool deterministic = false;
};

inline void validate(const TrainConfig& c) {
    if (c.d == 0) throw std::invalid_argument("TrainConfig: d must be positive");
    if (!(c.tau > 0.0)) throw std::invalid_argument("TrainConfig: tau must be positive");
    if (c.lambda_n < 0.0 || c.lambda_r < 0.0)
        throw std::invalid_argument("TrainConfig: loss weights must be non-negative");
    if (c.batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (c.epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be non-negative");
    if (c.hist_bins < 2) throw std::invalid_argument("TrainConfig: hist_bins must be >= 2");
    for (std::size_t h : c.hidden)
        if (h == 0) throw std::invalid_argument("TrainConfig: hidden sizes must be positive");
    validate(c.sfd);
    const OptimizerConfig& o = c.optimizer;
    if (o.momentum < 0.0 || o.momentum >= 1.0)
        throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
    if (o.learning_rate < 0.0)
        throw std::invalid_argument("TrainConfig: learning_rate must be non-negative");
    if (o.decay_milestones.size() != o.decay_factors.size())
        throw std::invalid_argument("TrainConfig: decay milestones and factors must pair up");
    for (std::size_t i = 0; i < o.decay_milestones.size(); ++i) {
        if (!(o.decay_factors[i] > 0.0))
            throw std::invalid_argument("TrainConfig: decay factors must be positive");
        if (o.decay_milestones[i] < 0 ||
            (c.epochs > 0 && o.decay_milestones[i] > c.epochs))
            throw std::invalid_argument("TrainConfig: decay milestones must lie in [0, epochs]");
        if (i > 0 && o.decay_milestones[i] <= o.decay_milestones[i - 1])
            throw std::invalid_argument("TrainConfig: decay milestones must increase");
    }
    if (c.augmentation.noise_std < 0.0)
        throw std::invalid_argument("TrainConfig: noise_std must be non-negative");
    if (c.augmentation.dropout_prob < 0.0 || c.augmentation.dropout_prob > 1.0)
        throw std::invalid_argument("TrainConfig: dropout_prob must be in [0, 1]");
}

// Base learning rate until the first milestone, then base times the factor
// of the most recent milestone at or before the epoch.
inline double lr_for_epoch(const OptimizerConfig& o, int epoch) {
    double factor = 1.0;
    for (std::size_t i = 0; i < o.decay_milestones.size(); ++i)
        if (epoch >= o.decay_milestones[i]) factor = o.decay_factors[i];
    return o.learning_rate * factor;
}

struct Dataset {
    Mat x;                           // n x input_dim
    std::vector<int> labels;         // evaluation only, never read by training
    std::vector<char> outlier_flags; // diagnostics only, may be empty
};

inline void validate(const Dataset& d) {
    if (d.x.rows == 0 || d.x.cols == 0) throw std::invalid_argument("Dataset: empty");
    if (d.labels.size() != d.x.rows) throw std::invalid_argument("Dataset: label count mismatch");
    if (!d.outlier_flags.empty() && d.outlier_flags.size() != d.x.rows)
        throw std::invalid_argument("Dataset: flag count mismatch");
}

struct EpochRecord {
    int epoch = 0;
    double l_s = 0.0, l_n = 0.0, l_r = 0.0, total = 0.0;
    double mean_sigma = 0.0;
    std::optional<double> knn_acc;
};

struct TrainState {
    EncoderModel model;
    EncoderModel momentum;  // same shapes, holds the optimizer velocity
    int epoch = 0;
    Rng rng;
    std::vector<EpochRecord> history;
};

// Raised when a step produces a non-finite loss or parameter; carries the
// loss components at failure and whatever history completed before it.
class TrainingDiverged : public std::runtime_error {
  public:
    TrainingDiverged(int epoch, LossReport report)
        : std::runtime_error("training diverged at epoch " + std::to_string(epoch)),
          epoch(epoch),
          report(std::move(report)) {}
    int epoch;
    LossReport report;
    std::vector<EpochRecord> partial_history;
};

// Additive Gaussian noise followed by independent coordinate dropout. The
// draw count is fixed regardless of the parameter values, so RNG streams
// stay aligned across configs.
inline Vec augment(const Vec& x, const AugmentConfig& a, Rng& rng) {
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + a.noise_std * rng.normal();
    for (std::size_t i = 0; i < x.size(); ++i)
        if (rng.uniform01() < a.dropout_prob) y[i] = 0.0;
    return y;
}

// Hook for the memory-bank / momentum-queue integration variants: a source
// of negative candidate sets maintained outside the current batch. The
// built-in pipeline is end-to-end only (negatives are the other instances of
// the batch) and never calls this; external integrations can implement it to
// swap in stored candidates without touching the loss code.
struct NegativeSetProvider {
    virtual ~NegativeSetProvider() = default;
    virtual std::vector<CandidateSet> negatives(std::size_t anchor_index) const = 0;
};

inline EmbeddingTable embed_dataset(const EncoderModel& model, const Dataset& ds) {
    validate(ds);
    EmbeddingTable t;
    t.features = Mat(ds.x.rows, model.embed_dim());
    t.sigmas = Mat(ds.x.rows, model.embed_dim());
    t.labels = ds.labels;
    Vec x(ds.x.cols);
    for (std::size_t r = 0; r < ds.x.rows; ++r) {
        std::copy(ds.x.row(r), ds.x.row(r) + ds.x.cols, x.begin());
        GaussianEmbedding g = encode(model, x);
        Vec f = normalized(g.mu);
        Vec s = g.sigma();
        std::copy(f.begin(), f.end(), t.features.row(r));
        std::copy(s.begin(), s.end(), t.sigmas.row(r));
    }
    return t;
}

namespace detail {

inline void sgd_update(EncoderModel& model, EncoderModel& momentum, const EncoderModel& grads,
                       double m, double lr) {
    auto wt = tensors(model);
    auto vt = tensors(momentum);
    auto gt = tensors(const_cast<EncoderModel&>(grads));
    for (std::size_t t = 0; t < wt.size(); ++t)
        for (std::size_t i = 0; i < wt[t].size; ++i) {
            vt[t].data[i] = m * vt[t].data[i] - lr * gt[t].data[i];
            wt[t].data[i] += vt[t].data[i];
        }
}

}  // namespace detail

// One optimizer step on a minibatch: augment, encode both views, sample
// candidate sets (count from the schedule), evaluate the combined loss,
// backpropagate through sampling and normalization into the encoder, and
// apply the momentum update at the current learning rate.
inline LossReport train_step(TrainState& state, const std::vector<Vec>& minibatch,
                             const TrainConfig& cfg) {
    if (minibatch.empty()) throw std::invalid_argument("train_step: empty minibatch");
    const std::size_t n = minibatch.size();
    const std::size_t k = cfg.deterministic
                              ? 1
                              : static_cast<std::size_t>(candidates_for_epoch(cfg.sfd, state.epoch));
    const std::size_t D = cfg.d;

    std::vector<ForwardCache> cache(n), cache_aug(n);
    std::vector<GaussianEmbedding> g, g_aug;
    g.reserve(n);
    g_aug.reserve(n);
    BatchCandidates batch;
    batch.sets.reserve(n);
    batch.aug_sets.reserve(n);

    for (std::size_t i = 0; i < n; ++i) {
        Vec view = augment(minibatch[i], cfg.augmentation, state.rng);
        GaussianEmbedding gi = encode(state.model, minibatch[i], &cache[i]);
        GaussianEmbedding ga = encode(state.model, view, &cache_aug[i]);
        if (cfg.deterministic) {
            std::fill(gi.log_var.begin(), gi.log_var.end(), kLogVarMin);
            std::fill(ga.log_var.begin(), ga.log_var.end(), kLogVarMin);
        }
        Mat noise = cfg.deterministic ? Mat(k, D, 0.0) : state.rng.normal_mat(k, D);
        Mat noise_aug = cfg.deterministic ? Mat(k, D, 0.0) : state.rng.normal_mat(k, D);
        batch.sets.push_back(sample_candidates(gi, k, noise, static_cast<int>(i)));
        batch.aug_sets.push_back(sample_candidates(ga, k, noise_aug, static_cast<int>(i)));
        g.push_back(std::move(gi));
        g_aug.push_back(std::move(ga));
    }

    HistogramConfig hist{cfg.hist_bins};
    LossReport report = total_loss(batch, g, g_aug, cfg.tau, cfg.lambda_n, cfg.lambda_r, hist);
    if (!std::isfinite(report.total)) throw TrainingDiverged(state.epoch, report);

    EncoderModel grads = zeros_like(state.model);
    for (std::size_t i = 0; i < n; ++i) {
        GaussianGrad dg = candidate_backward(g[i], batch.sets[i], report.grads.d_sets[i]);
        accumulate(dg, report.grads.d_gauss[i]);
        GaussianGrad da = candidate_backward(g_aug[i], batch.aug_sets[i], report.grads.d_aug_sets[i]);
        accumulate(da, report.grads.d_aug_gauss[i]);
        if (cfg.deterministic) {
            std::fill(dg.d_log_var.begin(), dg.d_log_var.end(), 0.0);
            std::fill(da.d_log_var.begin(), da.d_log_var.end(), 0.0);
        }
        encoder_backward(state.model, cache[i], dg.d_mu, dg.d_log_var, grads);
        encoder_backward(state.model, cache_aug[i], da.d_mu, da.d_log_var, grads);
    }

    detail::sgd_update(state.model, state.momentum, grads, cfg.optimizer.momentum,
                       lr_for_epoch(cfg.optimizer, state.epoch));
    if (!all_parameters_finite(state.model)) throw TrainingDiverged(state.epoch, report);
    return report;
}

// Optional per-epoch evaluation callback; a returned value lands in the
// epoch record's knn_acc column.
using EvalHook = std::function<std::optional<double>(const EncoderModel&, int)>;

// Full training run: seeded per-epoch shuffling, schedule-driven candidate
// counts, per-epoch loss means and mean uncertainty. Divergence is rethrown
// with the completed epochs attached.
inline TrainState fit(const Dataset& ds, const TrainConfig& cfg, const EvalHook& hook = {}) {
    validate(cfg);
    validate(ds);
    TrainState state;
    Rng init_rng(splitmix64(cfg.seed));
    state.model = init_encoder(ds.x.cols, cfg.hidden, cfg.d, init_rng);
    state.momentum = zeros_like(state.model);
    state.rng = init_rng;

    const std::size_t n = ds.x.rows;
    std::vector<std::size_t> order(n);
    std::vector<Vec> minibatch;
    for (state.epoch = 0; state.epoch < cfg.epochs; ++state.epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(state.epoch)));
        shuffle_rng.shuffle(order);

        double sum_s = 0.0, sum_n = 0.0, sum_r = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            std::size_t stop = std::min(n, start + cfg.batch_size);
            minibatch.clear();
            for (std::size_t i = start; i < stop; ++i) {
                minibatch.emplace_back(ds.x.row(order[i]), ds.x.row(order[i]) + ds.x.cols);
            }
            LossReport rep;
            try {
                rep = train_step(state, minibatch, cfg);
            } catch (TrainingDiverged& e) {
                e.partial_history = state.history;
                throw;
            }
            sum_s += rep.l_s;
            sum_n += rep.l_n;
            sum_r += rep.l_r * static_cast<double>(stop - start);
        }

        EpochRecord rec;
        rec.epoch = state.epoch;
        rec.l_s = sum_s / static_cast<double>(n);
        rec.l_n = sum_n / static_cast<double>(n);
        rec.l_r = sum_r / static_cast<double>(n);
        rec.total = rec.l_s + cfg.lambda_n * rec.l_n + cfg.lambda_r * rec.l_r;
        EmbeddingTable table = embed_dataset(state.model, ds);
        rec.mean_sigma = mean_uncertainty(table.sigmas);
        if (hook) rec.knn_acc = hook(state.model, state.epoch);
        state.history.push_back(rec);
    }
    return state;
}

}  // namespace umm
