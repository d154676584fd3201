#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "umm/diffcheck.hpp"
#include "umm/losses.hpp"

using namespace umm;

namespace {

// Random batch of n candidate sets (plus augmented partners), k rows each.
BatchCandidates make_batch(Rng& rng, std::size_t n, std::size_t k, std::size_t D) {
    BatchCandidates b;
    for (std::size_t i = 0; i < n; ++i) {
        GaussianEmbedding g(rng.unit_vec(D), Vec(D, -2.0));
        GaussianEmbedding ga(rng.unit_vec(D), Vec(D, -2.0));
        b.sets.push_back(sample_candidates(g, k, rng.normal_mat(k, D), static_cast<int>(i)));
        b.aug_sets.push_back(sample_candidates(ga, k, rng.normal_mat(k, D), static_cast<int>(i)));
    }
    return b;
}

std::vector<GaussianEmbedding> random_embeddings(Rng& rng, std::size_t n, std::size_t D) {
    std::vector<GaussianEmbedding> out;
    for (std::size_t i = 0; i < n; ++i) {
        Vec lv(D);
        for (double& v : lv) v = -2.0 + 2.0 * rng.uniform01();
        out.emplace_back(rng.normal_vec(D), std::move(lv));
    }
    return out;
}

Vec pack_rows(const std::vector<CandidateSet>& sets) {
    Vec p;
    for (const auto& s : sets) p.insert(p.end(), s.z.data.begin(), s.z.data.end());
    return p;
}

void unpack_rows(std::vector<CandidateSet>& sets, const Vec& p) {
    std::size_t off = 0;
    for (auto& s : sets) {
        std::copy(p.begin() + off, p.begin() + off + s.z.data.size(), s.z.data.begin());
        off += s.z.data.size();
    }
}

// Smallest distance of any pooled pair similarity to a histogram kink
// (integer grid position). Large values mean finite differencing cannot
// step across a kink.
double min_kink_distance(const std::vector<CandidateSet>& sets, int B) {
    std::vector<const double*> rows;
    const std::size_t D = sets.front().z.cols;
    for (const auto& s : sets)
        for (std::size_t j = 0; j < s.z.rows; ++j) rows.push_back(s.z.row(j));
    double best = 1e300;
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = a + 1; b < rows.size(); ++b) {
            double p = (dot(rows[a], rows[b], D) + 1.0) * B / 2.0;
            best = std::min(best, std::abs(p - std::round(p)));
        }
    return best;
}

CandidateSet from_rows(std::initializer_list<Vec> rows, int idx) {
    std::size_t D = rows.begin()->size();
    Mat m(rows.size(), D);
    std::size_t r = 0;
    for (const Vec& v : rows) {
        std::copy(v.begin(), v.end(), m.row(r));
        ++r;
    }
    return candidate_set_from_rows(std::move(m), idx);
}

}  // namespace

TEST_CASE("candidate_set_from_rows insists on unit rows", "[losses]") {
    REQUIRE_NOTHROW(from_rows({{1.0, 0.0}, {0.0, -1.0}}, 0));
    REQUIRE_THROWS_AS(from_rows({{0.5, 0.5}}, 0), std::invalid_argument);
    REQUIRE_THROWS_AS(candidate_set_from_rows(Mat(), 0), std::invalid_argument);
}

TEST_CASE("batch validation catches misaligned batches", "[losses]") {
    Rng rng(5);
    BatchCandidates b = make_batch(rng, 3, 2, 4);
    REQUIRE_NOTHROW(validate(b));

    BatchCandidates empty;
    REQUIRE_THROWS_AS(validate(empty), std::invalid_argument);

    BatchCandidates bad_idx = b;
    bad_idx.sets[1].source_index = 5;
    REQUIRE_THROWS_AS(validate(bad_idx), std::invalid_argument);

    BatchCandidates uneven = b;
    uneven.aug_sets.pop_back();
    REQUIRE_THROWS_AS(validate(uneven), std::invalid_argument);
}

TEST_CASE("set distance averages pairwise inner products", "[losses]") {
    CandidateSet a = from_rows({{1.0, 0.0}, {0.0, 1.0}}, 0);
    CandidateSet b = from_rows({{1.0, 0.0}}, 1);
    REQUIRE(set_distance(a, b) == Catch::Approx(0.5).epsilon(1e-15));
    REQUIRE(set_distance(b, b) == Catch::Approx(1.0).epsilon(1e-15));

    Mat m1(1, 2), m2(1, 3);
    REQUIRE_THROWS_AS(set_distance(m1, m2), std::invalid_argument);
    REQUIRE_THROWS_AS(set_distance(Mat(0, 2), m1), std::invalid_argument);
}

TEST_CASE("set distance of unit rows stays in [-1, 1]", "[losses]") {
    Rng rng(9);
    for (int t = 0; t < 30; ++t) {
        BatchCandidates b = make_batch(rng, 2, 3, 5);
        double d = set_distance(b.sets[0], b.aug_sets[1]);
        REQUIRE(d <= 1.0 + 1e-12);
        REQUIRE(d >= -1.0 - 1e-12);
    }
}

TEST_CASE("set distance gradient is the scaled opposite column sum", "[losses]") {
    Rng rng(13);
    BatchCandidates batch = make_batch(rng, 2, 3, 4);
    const Mat &A = batch.sets[0].z, &B = batch.sets[1].z;
    SetDistanceResult r = set_distance_grad(A, B);
    REQUIRE(r.value == Catch::Approx(set_distance(A, B)).epsilon(1e-15));

    // finite difference through one row entry of each side
    auto f = [&](const Vec& p) {
        Mat a = A, b = B;
        std::copy(p.begin(), p.begin() + a.data.size(), a.data.begin());
        std::copy(p.begin() + a.data.size(), p.end(), b.data.begin());
        return set_distance(a, b);
    };
    Vec x = A.data;
    x.insert(x.end(), B.data.begin(), B.data.end());
    Vec analytic;
    for (std::size_t j = 0; j < A.rows; ++j)
        analytic.insert(analytic.end(), r.d_a_row.begin(), r.d_a_row.end());
    for (std::size_t j = 0; j < B.rows; ++j)
        analytic.insert(analytic.end(), r.d_b_row.begin(), r.d_b_row.end());
    REQUIRE(check_gradient(f, x, analytic, 1e-6, 1e-5).passed);
}

TEST_CASE("match probability for an easy pair is 1 / (1 + e^-2)", "[losses]") {
    // Two instances, one candidate each; self-distance 1, cross-distance 0,
    // temperature 0.5 puts the correct match at e^2 : 1 odds.
    BatchCandidates b;
    b.sets.push_back(from_rows({{1.0, 0.0}}, 0));
    b.sets.push_back(from_rows({{0.0, 1.0}}, 1));
    b.aug_sets.push_back(from_rows({{1.0, 0.0}}, 0));
    b.aug_sets.push_back(from_rows({{0.0, 1.0}}, 1));

    double p = softmax_probability(b, 0, 0.5);
    REQUIRE(p == Catch::Approx(0.8807970779778823).epsilon(1e-14));
    REQUIRE(softmax_probability(b, 1, 0.5) == Catch::Approx(p).epsilon(1e-14));

    REQUIRE_THROWS_AS(softmax_probability(b, 0, 0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(softmax_probability(b, 2, 0.5), std::invalid_argument);
}

TEST_CASE("match probabilities over one column sum to 1", "[losses]") {
    Rng rng(17);
    BatchCandidates b = make_batch(rng, 5, 2, 4);
    auto pd = detail::pairwise_set_distances(b);
    for (std::size_t i = 0; i < 5; ++i) {
        Vec p = detail::softmax_column(pd.d, i, 0.1);
        double sum = 0.0;
        for (std::size_t m = 0; m < 5; ++m) {
            REQUIRE(p[m] > 0.0);
            sum += p[m];
        }
        REQUIRE(std::abs(sum - 1.0) < 1e-9);
        REQUIRE(softmax_probability(b, i, 0.1) == Catch::Approx(p[i]).epsilon(1e-12));
    }
}

TEST_CASE("softmax stabilization survives extreme temperatures", "[losses]") {
    Rng rng(19);
    BatchCandidates b = make_batch(rng, 4, 2, 4);
    for (double tau : {1e-3, 1e3}) {
        double p = softmax_probability(b, 0, tau);
        REQUIRE(std::isfinite(p));
        REQUIRE(p > 0.0);
        REQUIRE(p <= 1.0);
    }
}

TEST_CASE("matching loss is the negative log of the diagonal probabilities", "[losses]") {
    Rng rng(23);
    BatchCandidates b = make_batch(rng, 4, 2, 5);
    SoftmaxLossResult r = loss_softmax(b, 0.3);
    double want = 0.0;
    for (std::size_t i = 0; i < 4; ++i) want += -std::log(softmax_probability(b, i, 0.3));
    REQUIRE(r.value == Catch::Approx(want).epsilon(1e-12));
    REQUIRE(r.value > 0.0);
}

TEST_CASE("matching loss gradients are constant per set and match finite differences",
          "[losses]") {
    Rng rng(29);
    BatchCandidates b = make_batch(rng, 3, 2, 3);
    const double tau = 0.4;
    SoftmaxLossResult r = loss_softmax(b, tau);

    // every row of one set moves the same way: the distance only sees column sums
    for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t d = 0; d < 3; ++d) {
            REQUIRE(r.d_sets[m](0, d) == r.d_sets[m](1, d));
            REQUIRE(r.d_aug_sets[m](0, d) == r.d_aug_sets[m](1, d));
        }

    auto f = [&](const Vec& p) {
        BatchCandidates c = b;
        std::size_t half = pack_rows(b.sets).size();
        unpack_rows(c.sets, Vec(p.begin(), p.begin() + half));
        unpack_rows(c.aug_sets, Vec(p.begin() + half, p.end()));
        return loss_softmax(c, tau).value;
    };
    Vec x = pack_rows(b.sets);
    Vec xa = pack_rows(b.aug_sets);
    x.insert(x.end(), xa.begin(), xa.end());

    Vec analytic;
    for (const Mat& m : r.d_sets) analytic.insert(analytic.end(), m.data.begin(), m.data.end());
    for (const Mat& m : r.d_aug_sets)
        analytic.insert(analytic.end(), m.data.begin(), m.data.end());
    REQUIRE(check_gradient(f, x, analytic, 1e-4, 1e-5).passed);
}

TEST_CASE("consistency loss sums symmetric divergences and forwards their gradients",
          "[losses]") {
    Rng rng(31);
    auto g = random_embeddings(rng, 3, 4);
    auto ga = random_embeddings(rng, 3, 4);
    ConsistencyLossResult r = loss_consistency(g, ga);
    double want = 0.0;
    for (std::size_t i = 0; i < 3; ++i) want += symmetric_divergence(g[i], ga[i]).value;
    REQUIRE(r.value == Catch::Approx(want).epsilon(1e-14));
    auto sd = symmetric_divergence(g[1], ga[1]);
    for (std::size_t d = 0; d < 4; ++d) {
        REQUIRE(r.d_gauss[1].d_mu[d] == sd.d_a.d_mu[d]);
        REQUIRE(r.d_aug_gauss[1].d_log_var[d] == sd.d_b.d_log_var[d]);
    }
    REQUIRE(loss_consistency(g, g).value == 0.0);
    REQUIRE_THROWS_AS(loss_consistency(g, random_embeddings(rng, 2, 4)), std::invalid_argument);
}

TEST_CASE("exact AP ranks the whole pool with the query pinned on top", "[losses]") {
    // Own set: query e1 plus a candidate at cos 53.13 deg; rival set holds a
    // closer negative and a far one. Ranks: self, neg(0.8), pos(0.6), neg(-0.5).
    std::vector<CandidateSet> sets;
    sets.push_back(from_rows({{1.0, 0.0}, {0.6, 0.8}}, 0));
    sets.push_back(from_rows({{0.8, 0.6}, {-0.5, std::sqrt(0.75)}}, 1));
    double ap = exact_ap(sets, 0, 0);
    REQUIRE(ap == Catch::Approx(5.0 / 6.0).epsilon(1e-14));

    // Perfectly separated batch: every positive above every negative.
    std::vector<CandidateSet> clean;
    clean.push_back(from_rows({{1.0, 0.0}, {1.0, 0.0}}, 0));
    clean.push_back(from_rows({{-1.0, 0.0}, {0.0, 1.0}}, 1));
    REQUIRE(exact_ap(clean, 0, 0) == 1.0);
    REQUIRE(exact_ap(clean, 0, 1) == 1.0);

    REQUIRE_THROWS_AS(exact_ap(sets, 2, 0), std::invalid_argument);
    REQUIRE_THROWS_AS(exact_ap(sets, 0, 5), std::invalid_argument);
}

TEST_CASE("exact AP breaks similarity ties by pool position", "[losses]") {
    // t (positive) and u (negative) tie at similarity 0.6 from the query e1;
    // whichever owns the smaller flat index ranks first.
    Vec q{1.0, 0.0, 0.0}, t{0.6, 0.8, 0.0}, u{0.6, 0.0, 0.8}, v{-1.0, 0.0, 0.0};

    std::vector<CandidateSet> pos_first;
    pos_first.push_back(from_rows({q, t}, 0));  // positive t sits at flat 1
    pos_first.push_back(from_rows({u, v}, 1));  // negative u at flat 2
    REQUIRE(exact_ap(pos_first, 0, 0) == 1.0);  // (1/2)(1/1 + 2/2)

    std::vector<CandidateSet> neg_first;
    neg_first.push_back(from_rows({u, v}, 0));  // negative u now at flat 0
    neg_first.push_back(from_rows({q, t}, 1));  // positives at flats 2, 3
    REQUIRE(exact_ap(neg_first, 1, 0) == Catch::Approx(5.0 / 6.0).epsilon(1e-14));
}

TEST_CASE("triangular kernel splits mass across two centers", "[losses]") {
    const int B = 10;
    // interior point between centers: weights sum to 1, slopes are +-B/2
    auto sp = detail::kernel_spread(-0.37, B);
    REQUIRE(sp.b0 + 1 == sp.b1);
    REQUIRE(sp.w0 + sp.w1 == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(sp.g0 == -5.0);
    REQUIRE(sp.g1 == 5.0);

    // exactly on a center: all mass there, zero slope (kink subgradient)
    auto center = detail::kernel_spread(-1.0 + 2.0 * 3 / B, B);
    REQUIRE(center.b0 == 3);
    REQUIRE(center.w0 == 1.0);
    REQUIRE(center.g0 == 0.0);
    REQUIRE(center.b1 == -1);

    // endpoints own exactly one kernel
    auto lo = detail::kernel_spread(-1.0, B);
    REQUIRE(lo.b0 == 0);
    REQUIRE(lo.w0 == 1.0);
    auto hi = detail::kernel_spread(1.0, B);
    REQUIRE(hi.b0 == B);
    REQUIRE(hi.w0 == 1.0);

    // out-of-range similarities fade out over one bin width, then vanish
    auto below = detail::kernel_spread(-1.0 - 1.0 / B, B);
    REQUIRE(below.b0 == 0);
    REQUIRE(below.w0 == Catch::Approx(0.5).epsilon(1e-12));
    REQUIRE(below.g0 == 5.0);
    auto gone = detail::kernel_spread(-1.0 - 2.1 / B, B);
    REQUIRE(gone.b0 == -1);
}

TEST_CASE("histogram AP on a two-bin grid reproduces the hand computation", "[losses]") {
    // B = 2 (centers -1, 0, 1). Positive at 0.5 splits between the middle and
    // top bins, negative at -0.5 between bottom and middle; the query itself
    // is fixed mass in the top bin. Working the suffix sums by hand gives 0.95.
    const double s3 = std::sqrt(0.75);
    std::vector<CandidateSet> sets;
    sets.push_back(from_rows({{1.0, 0.0}, {0.5, s3}}, 0));
    sets.push_back(from_rows({{-0.5, s3}}, 1));
    HistogramConfig cfg{2};
    REQUIRE(histogram_ap(sets, 0, 0, cfg) == Catch::Approx(0.95).epsilon(1e-14));
    // quantization can only blur this ranking; the exact AP is perfect
    REQUIRE(exact_ap(sets, 0, 0) == 1.0);
    HistogramConfig coarse{1};
    REQUIRE_THROWS_AS(histogram_ap(sets, 0, 0, coarse), std::invalid_argument);
}

TEST_CASE("histogram AP equals exact AP when similarities sit on bin centers", "[losses]") {
    // B = 8 puts centers every 0.25; all four pool similarities land on one.
    auto on_center = [](double s) { return Vec{s, std::sqrt(1.0 - s * s)}; };
    std::vector<CandidateSet> sets;
    sets.push_back(from_rows({{1.0, 0.0}, on_center(0.5)}, 0));
    sets.push_back(from_rows({on_center(0.75), on_center(-0.25)}, 1));
    HistogramConfig cfg{8};
    double hist = histogram_ap(sets, 0, 0, cfg);
    double exact = exact_ap(sets, 0, 0);
    REQUIRE(exact == Catch::Approx(1.0 / 2.0 * (1.0 + 2.0 / 3.0)).epsilon(1e-14));
    REQUIRE(hist == Catch::Approx(exact).epsilon(1e-12));
}

TEST_CASE("bin centers span [-1, 1] uniformly", "[losses]") {
    HistogramConfig cfg{4};
    REQUIRE(bin_center(cfg, 0) == -1.0);
    REQUIRE(bin_center(cfg, 2) == 0.0);
    REQUIRE(bin_center(cfg, 4) == 1.0);
    REQUIRE(bin_center(cfg, 3) == Catch::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("ranking loss is one minus mean histogram AP, clamped to [0, 1]", "[losses]") {
    Rng rng(37);
    BatchCandidates b = make_batch(rng, 3, 2, 4);
    HistogramConfig cfg{12};
    RankingLossResult r = loss_ranking(b.sets, cfg, false);
    REQUIRE(r.d_sets.empty());

    double mean = 0.0;
    std::size_t q = 0;
    for (std::size_t i = 0; i < b.sets.size(); ++i)
        for (std::size_t j = 0; j < b.sets[i].z.rows; ++j, ++q)
            mean += histogram_ap(b.sets, i, j, cfg);
    mean /= static_cast<double>(q);
    REQUIRE(r.value == Catch::Approx(1.0 - mean).epsilon(1e-12));
    REQUIRE(r.value >= 0.0);
    REQUIRE(r.value <= 1.0);

    // a batch of coincident duplicates ranks perfectly: zero loss
    std::vector<CandidateSet> clean;
    clean.push_back(from_rows({{1.0, 0.0}, {1.0, 0.0}}, 0));
    clean.push_back(from_rows({{-1.0, 0.0}, {-1.0, 0.0}}, 1));
    REQUIRE(loss_ranking(clean, cfg).value == 0.0);
}

TEST_CASE("ranking loss gradient matches finite differences away from kinks", "[losses]") {
    HistogramConfig cfg{5};
    BatchCandidates b;
    // resample until every pooled similarity is clear of the bin-center kinks
    for (std::uint64_t seed = 41;; ++seed) {
        Rng rng(seed);
        b = make_batch(rng, 3, 2, 3);
        if (min_kink_distance(b.sets, cfg.bins) > 0.02) break;
    }
    RankingLossResult r = loss_ranking(b.sets, cfg);
    REQUIRE(r.value > 0.0);  // a random batch never ranks perfectly

    auto f = [&](const Vec& p) {
        std::vector<CandidateSet> sets = b.sets;
        unpack_rows(sets, p);
        return loss_ranking(sets, cfg, false).value;
    };
    Vec analytic;
    for (const Mat& m : r.d_sets) analytic.insert(analytic.end(), m.data.begin(), m.data.end());
    REQUIRE(check_gradient(f, pack_rows(b.sets), analytic, 1e-4, 1e-6).passed);
}

TEST_CASE("total loss composes the three terms with their weights", "[losses]") {
    Rng rng(43);
    BatchCandidates b = make_batch(rng, 3, 2, 4);
    auto g = random_embeddings(rng, 3, 4);
    auto ga = random_embeddings(rng, 3, 4);
    HistogramConfig cfg{6};
    const double tau = 0.5, ln = 0.7, lr = 0.3;

    LossReport rep = total_loss(b, g, ga, tau, ln, lr, cfg);
    SoftmaxLossResult soft = loss_softmax(b, tau);
    ConsistencyLossResult cons = loss_consistency(g, ga);
    RankingLossResult rank = loss_ranking(b.sets, cfg);

    REQUIRE(rep.l_s == soft.value);
    REQUIRE(rep.l_n == cons.value);
    REQUIRE(rep.l_r == rank.value);
    REQUIRE(rep.total == rep.l_s + ln * rep.l_n + lr * rep.l_r);

    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t e = 0; e < rep.grads.d_sets[i].data.size(); ++e)
            REQUIRE(rep.grads.d_sets[i].data[e] ==
                    soft.d_sets[i].data[e] + lr * rank.d_sets[i].data[e]);
        for (std::size_t d = 0; d < 4; ++d) {
            REQUIRE(rep.grads.d_gauss[i].d_mu[d] == ln * cons.d_gauss[i].d_mu[d]);
            REQUIRE(rep.grads.d_aug_gauss[i].d_log_var[d] ==
                    ln * cons.d_aug_gauss[i].d_log_var[d]);
        }
    }
}

TEST_CASE("zero-weight loss terms are skipped entirely", "[losses]") {
    Rng rng(47);
    BatchCandidates b = make_batch(rng, 3, 2, 4);
    auto g = random_embeddings(rng, 3, 4);
    auto ga = random_embeddings(rng, 3, 4);
    HistogramConfig cfg{6};

    LossReport rep = total_loss(b, g, ga, 0.5, 0.0, 0.0, cfg);
    REQUIRE(rep.l_n == 0.0);
    REQUIRE(rep.l_r == 0.0);
    REQUIRE(rep.total == rep.l_s);
    SoftmaxLossResult soft = loss_softmax(b, 0.5);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(rep.grads.d_sets[i].data == soft.d_sets[i].data);
        for (double v : rep.grads.d_gauss[i].d_mu) REQUIRE(v == 0.0);
        for (double v : rep.grads.d_gauss[i].d_log_var) REQUIRE(v == 0.0);
    }

    REQUIRE_THROWS_AS(total_loss(b, g, ga, 0.5, -0.1, 0.0, cfg), std::invalid_argument);
    REQUIRE_THROWS_AS(total_loss(b, g, ga, 0.5, 0.0, -1.0, cfg), std::invalid_argument);
    auto short_g = random_embeddings(rng, 2, 4);
    REQUIRE_THROWS_AS(total_loss(b, short_g, ga, 0.5, 0.0, 0.0, cfg), std::invalid_argument);
}
