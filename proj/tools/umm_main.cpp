// Single-binary front end: dataset generation, training, evaluation, and the
// analytical probes, all driven by flags and config files. Every command is
// deterministic in its inputs; reruns produce byte-identical artifacts.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "umm/io.hpp"
#include "umm/probes.hpp"

namespace {

using namespace umm;

OutlierMode parse_mode(const std::string& s) {
    if (s == "near-dup" || s == "near-duplicate-cross-class")
        return OutlierMode::near_duplicate_cross_class;
    if (s == "intra-div" || s == "intra-class-divergent") return OutlierMode::intra_class_divergent;
    if (s == "both") return OutlierMode::both;
    throw std::invalid_argument("unknown outlier mode \"" + s +
                                "\"; valid: near-dup, intra-div, both");
}

struct GenFlags {
    std::string out, flags_out;
    OutlierDatasetConfig cfg;
    std::string mode = "both";
};

int cmd_gen(GenFlags& f) {
    f.cfg.outlier_mode = parse_mode(f.mode);
    Dataset ds = make_outlier_dataset(f.cfg);
    if (f.flags_out.empty()) f.flags_out = f.out + ".flags";
    save_dataset(f.out, ds);
    write_atomic(f.flags_out, flags_to_text(ds.outlier_flags));
    std::cout << "wrote " << f.out << "\n" << "wrote " << f.flags_out << "\n";
    return 0;
}

struct TrainFlags {
    std::string config_path, data_path, ckpt_out, history_out;
    int eval_every = 0;
    double holdout = 0.2;
    std::uint64_t seed_override = 0;
    bool has_seed_override = false;
};

// Deterministic held-out split for interleaved evaluation: seeded shuffle,
// first slice becomes the held-out set.
void split_dataset(const Dataset& ds, double holdout, std::uint64_t seed, Dataset& train,
                   Dataset& test) {
    std::vector<std::size_t> order(ds.x.rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, 0x686f6c646f7574ull));
    rng.shuffle(order);
    std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(holdout * ds.x.rows));
    if (n_test >= ds.x.rows)
        throw std::invalid_argument("holdout fraction leaves no training data");
    auto copy_rows = [&](Dataset& dst, std::size_t from, std::size_t to) {
        dst.x = Mat(to - from, ds.x.cols);
        dst.labels.resize(to - from);
        for (std::size_t i = from; i < to; ++i) {
            std::copy(ds.x.row(order[i]), ds.x.row(order[i]) + ds.x.cols, dst.x.row(i - from));
            dst.labels[i - from] = ds.labels[order[i]];
        }
    };
    copy_rows(test, 0, n_test);
    copy_rows(train, n_test, ds.x.rows);
}

int cmd_train(TrainFlags& f) {
    TrainConfig cfg = load_train_config(f.config_path);
    if (f.has_seed_override) cfg.seed = f.seed_override;
    validate(cfg);
    Dataset ds = load_dataset(f.data_path);

    Dataset train_split, test_split;
    EvalHook hook;
    const Dataset* fit_data = &ds;
    if (f.eval_every > 0) {
        if (f.holdout <= 0.0 || f.holdout >= 1.0)
            throw std::invalid_argument("holdout must be in (0, 1) when eval-every is set");
        split_dataset(ds, f.holdout, cfg.seed, train_split, test_split);
        fit_data = &train_split;
        hook = [&](const EncoderModel& model, int epoch) -> std::optional<double> {
            if (epoch % f.eval_every != 0 && epoch != cfg.epochs - 1) return std::nullopt;
            EmbeddingTable tr = embed_dataset(model, train_split);
            EmbeddingTable te = embed_dataset(model, test_split);
            return knn_accuracy(tr, te);
        };
    }

    TrainState state;
    try {
        state = fit(*fit_data, cfg, hook);
    } catch (const TrainingDiverged& e) {
        write_history(f.history_out, e.partial_history);
        std::cerr << "error: " << e.what() << " (l_s=" << e.report.l_s << " l_n=" << e.report.l_n
                  << " l_r=" << e.report.l_r << ")\n";
        std::cout << "wrote " << f.history_out << "\n";
        return 2;
    }
    save_checkpoint(f.ckpt_out, state, cfg, ds.x.cols);
    write_history(f.history_out, state.history);
    std::cout << "wrote " << f.ckpt_out << "\n" << "wrote " << f.history_out << "\n";
    return 0;
}

struct EvalFlags {
    std::string ckpt, train_data, test_data, metrics_out, embeddings_out, hist_out;
    int hist_bins = 40;
    std::size_t top_k = 200;
    double tau = 0.1;
};

int cmd_eval(EvalFlags& f) {
    Checkpoint ckpt = load_checkpoint(f.ckpt);
    Dataset train_ds = load_dataset(f.train_data);
    bool same = std::filesystem::exists(f.test_data) &&
                std::filesystem::equivalent(f.train_data, f.test_data);
    Dataset test_ds = same ? Dataset{} : load_dataset(f.test_data);
    const Dataset& test_ref = same ? train_ds : test_ds;
    if (train_ds.x.cols != ckpt.input_dim || test_ref.x.cols != ckpt.input_dim)
        throw std::invalid_argument("dataset dimension does not match checkpoint input_dim");

    EmbeddingTable train_table = embed_dataset(ckpt.state.model, train_ds);
    EmbeddingTable test_table_own;
    if (!same) test_table_own = embed_dataset(ckpt.state.model, test_ds);
    // Same file on both sides: evaluate against one shared table so each
    // query is excluded from its own neighbor list.
    const EmbeddingTable& test_table = same ? train_table : test_table_own;

    std::vector<std::pair<std::string, double>> metrics;
    metrics.emplace_back("knn_acc", knn_accuracy(train_table, test_table, f.top_k, f.tau));
    auto recall = recall_at(test_table, {1, 2, 4});
    for (auto [k, v] : recall) metrics.emplace_back("recall_at_" + std::to_string(k), v);
    metrics.emplace_back("nmi", clustering_nmi(test_table));
    metrics.emplace_back("mean_sigma", mean_uncertainty(test_table.sigmas));
    write_atomic(f.metrics_out, metrics_to_csv(metrics));
    std::cout << "wrote " << f.metrics_out << "\n";

    if (!f.embeddings_out.empty()) {
        write_atomic(f.embeddings_out, embeddings_to_jsonl(test_table));
        std::cout << "wrote " << f.embeddings_out << "\n";
    }
    if (!f.hist_out.empty()) {
        CosineHistogram h = cosine_histogram(test_table, f.hist_bins);
        write_atomic(f.hist_out + "_pos.csv", histogram_to_csv(h.centers, h.positive));
        write_atomic(f.hist_out + "_neg.csv", histogram_to_csv(h.centers, h.negative));
        std::cout << "wrote " << f.hist_out << "_pos.csv\n"
                  << "wrote " << f.hist_out << "_neg.csv\n";
    }
    return 0;
}

struct ProbeFlags {
    std::string name, out;
    std::size_t n = 64;
    double tau = 0.07;
    std::size_t k = 5;
    double sigma_scale = 0.3;
    std::size_t dim = 32;
    std::uint64_t seed = 1;
    double kl = 0.0;
    double delta = 1.0;
};

int cmd_probe(ProbeFlags& f) {
    json report;
    if (f.name == "vanish") {
        VanishingReport r = vanishing_probe(f.n, f.tau, f.k, f.sigma_scale, f.seed, f.dim);
        report["probe"] = "vanish";
        report["n"] = r.n;
        report["k"] = r.k;
        report["tau"] = r.tau;
        report["sigma_scale"] = f.sigma_scale;
        report["dim"] = f.dim;
        report["seed"] = f.seed;
        report["p_duplicate"] = r.p_duplicate;
        report["grad_norm_point"] = r.grad_norm_point;
        report["grad_norm_set"] = r.grad_norm_set;
        report["ratio"] = r.ratio;
        report["pair_grad_norm_point"] = r.pair_grad_norm_point;
        report["pair_grad_norm_set"] = r.pair_grad_norm_set;
        report["batch_grad_norm_mean"] = r.batch_grad_norm_mean;
    } else if (f.name == "pacbayes") {
        report["probe"] = "pacbayes";
        report["kl"] = f.kl;
        report["n"] = f.n;
        report["delta"] = f.delta;
        report["bound"] = pac_bayes_bound(f.kl, f.n, f.delta);
        report["bound_squared"] = pac_bayes_bound_squared(f.kl, f.n, f.delta);
    } else {
        throw std::invalid_argument("unknown probe \"" + f.name +
                                    "\"; valid names: vanish, pacbayes");
    }
    write_atomic(f.out, report.dump(2) + "\n");
    std::cout << "wrote " << f.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"uncertainty-aware instance embeddings: data, training, evaluation, probes"};
    app.require_subcommand(1);

    GenFlags gen;
    CLI::App* g = app.add_subcommand("gen", "generate a synthetic outlier dataset");
    g->add_option("--out", gen.out, "dataset output path (JSONL)")->required();
    g->add_option("--flags-out", gen.flags_out, "outlier-flag sidecar path (default: <out>.flags)");
    g->add_option("--classes", gen.cfg.classes, "number of classes");
    g->add_option("--per-class", gen.cfg.per_class, "points per class");
    g->add_option("--input-dim", gen.cfg.input_dim, "input dimensionality");
    g->add_option("--separation", gen.cfg.class_separation, "distance between class centers");
    g->add_option("--outlier-fraction", gen.cfg.outlier_fraction, "fraction of outlier points");
    g->add_option("--mode", gen.mode, "outlier mode: near-dup, intra-div, both");
    g->add_option("--seed", gen.cfg.seed, "generator seed");

    TrainFlags train;
    CLI::App* t = app.add_subcommand("train", "train an encoder on a dataset");
    t->add_option("--config", train.config_path, "training config (JSON)")->required();
    t->add_option("--data", train.data_path, "dataset path (JSONL)")->required();
    t->add_option("--ckpt-out", train.ckpt_out, "checkpoint output path")->required();
    t->add_option("--history-out", train.history_out, "per-epoch history CSV path")->required();
    t->add_option("--eval-every", train.eval_every,
                  "interleave held-out kNN accuracy every N epochs (0 = off)");
    t->add_option("--holdout", train.holdout, "held-out fraction used with --eval-every");
    CLI::Option* seed_opt = t->add_option("--seed", train.seed_override, "override config seed");

    EvalFlags eval;
    CLI::App* e = app.add_subcommand("eval", "evaluate a checkpoint on train/test datasets");
    e->add_option("--ckpt", eval.ckpt, "checkpoint path")->required();
    e->add_option("--train-data", eval.train_data, "reference dataset (kNN voters)")->required();
    e->add_option("--test-data", eval.test_data, "query dataset")->required();
    e->add_option("--metrics-out", eval.metrics_out, "metrics CSV output path")->required();
    e->add_option("--embeddings-out", eval.embeddings_out, "embedding JSONL output path");
    e->add_option("--hist-out", eval.hist_out,
                  "cosine histogram path prefix (writes _pos.csv and _neg.csv)");
    e->add_option("--hist-bins", eval.hist_bins, "cosine histogram bin count");
    e->add_option("--top-k", eval.top_k, "kNN neighborhood size");
    e->add_option("--tau", eval.tau, "kNN vote temperature");

    ProbeFlags probe;
    CLI::App* p = app.add_subcommand("probe", "run an analytical probe");
    p->add_option("--name", probe.name, "probe name: vanish, pacbayes")->required();
    p->add_option("--out", probe.out, "report output path (JSON)")->required();
    p->add_option("--n", probe.n, "batch size (vanish) / sample count (pacbayes)");
    p->add_option("--tau", probe.tau, "softmax temperature (vanish)");
    p->add_option("--k", probe.k, "candidates per instance (vanish)");
    p->add_option("--sigma-scale", probe.sigma_scale, "candidate spread (vanish)");
    p->add_option("--dim", probe.dim, "embedding dimension (vanish)");
    p->add_option("--seed", probe.seed, "probe seed (vanish)");
    p->add_option("--kl", probe.kl, "KL(Q||P) term (pacbayes)");
    p->add_option("--delta", probe.delta, "confidence parameter (pacbayes)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        int code = app.exit(err);
        return code == 0 ? 0 : 1;  // help/version exit 0; any parse failure is usage
    }
    train.has_seed_override = seed_opt->count() > 0;

    try {
        if (g->parsed()) return cmd_gen(gen);
        if (t->parsed()) return cmd_train(train);
        if (e->parsed()) return cmd_eval(eval);
        if (p->parsed()) return cmd_probe(probe);
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
    return 1;
}
