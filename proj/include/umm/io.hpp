#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "training.hpp"

namespace umm {

using nlohmann::json;

// Shortest decimal form that parses back to the identical double, so every
// exported number survives a round trip bit-for-bit.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// All exports go through a temp file plus rename: a failed command never
// leaves a partial artifact behind.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
        out << content;
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- dataset files: one {"x": [...], "label": int} object per line ----

inline std::string dataset_to_jsonl(const Dataset& ds) {
    std::string out;
    for (std::size_t r = 0; r < ds.x.rows; ++r) {
        json j;
        j["x"] = std::vector<double>(ds.x.row(r), ds.x.row(r) + ds.x.cols);
        j["label"] = ds.labels[r];
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline Dataset parse_dataset(const std::string& text, const std::string& origin = "dataset") {
    Dataset ds;
    std::vector<Vec> rows;
    std::size_t lineno = 0, pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++lineno;
        if (line.empty()) continue;
        std::string where = origin + ":" + std::to_string(lineno);
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw std::invalid_argument(where + ": not valid JSON");
        if (!j.is_object() || !j.contains("x") || !j.contains("label"))
            throw std::invalid_argument(where + ": record needs \"x\" and \"label\"");
        for (const auto& [key, value] : j.items())
            if (key != "x" && key != "label")
                throw std::invalid_argument(where + ": unknown key \"" + key + "\"");
        if (!j["x"].is_array() || j["x"].empty())
            throw std::invalid_argument(where + ": \"x\" must be a nonempty array");
        if (!j["label"].is_number_integer())
            throw std::invalid_argument(where + ": \"label\" must be an integer");
        Vec x;
        for (const auto& v : j["x"]) {
            if (!v.is_number()) throw std::invalid_argument(where + ": \"x\" must hold numbers");
            x.push_back(v.get<double>());
        }
        if (!rows.empty() && x.size() != rows.front().size())
            throw std::invalid_argument(where + ": inconsistent dimension");
        rows.push_back(std::move(x));
        ds.labels.push_back(j["label"].get<int>());
    }
    if (rows.empty()) throw std::invalid_argument(origin + ": empty dataset");
    ds.x = Mat(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy(rows[r].begin(), rows[r].end(), ds.x.row(r));
    return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    return parse_dataset(read_file(path), path.string());
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    write_atomic(path, dataset_to_jsonl(ds));
}

inline std::string flags_to_text(const std::vector<char>& flags) {
    std::string out;
    for (char f : flags) {
        out += f ? '1' : '0';
        out += '\n';
    }
    return out;
}

// ---- training config: a JSON object mirroring TrainConfig ----
// Unknown keys are rejected by name at any nesting depth.

namespace detail {

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                                const std::string& prefix) {
    for (const auto& [key, value] : j.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw std::invalid_argument("config: unknown key \"" + prefix + key + "\"");
}

template <typename T>
T config_get(const json& j, const std::string& key, const std::string& prefix, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw std::invalid_argument("config: bad value for \"" + prefix + key + "\"");
    }
}

}  // namespace detail

inline TrainConfig parse_train_config(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: root must be an object");
    detail::reject_unknown_keys(
        j,
        {"d", "tau", "lambda_n", "lambda_r", "batch_size", "epochs", "hist_bins", "seed", "hidden",
         "sfd", "optimizer", "augmentation", "deterministic"},
        "");
    TrainConfig c;
    c.d = detail::config_get<std::size_t>(j, "d", "", c.d);
    c.tau = detail::config_get<double>(j, "tau", "", c.tau);
    c.lambda_n = detail::config_get<double>(j, "lambda_n", "", c.lambda_n);
    c.lambda_r = detail::config_get<double>(j, "lambda_r", "", c.lambda_r);
    c.batch_size = detail::config_get<std::size_t>(j, "batch_size", "", c.batch_size);
    c.epochs = detail::config_get<int>(j, "epochs", "", c.epochs);
    c.hist_bins = detail::config_get<int>(j, "hist_bins", "", c.hist_bins);
    c.seed = detail::config_get<std::uint64_t>(j, "seed", "", c.seed);
    c.hidden = detail::config_get<std::vector<std::size_t>>(j, "hidden", "", c.hidden);
    c.deterministic = detail::config_get<bool>(j, "deterministic", "", c.deterministic);
    if (j.contains("sfd")) {
        c.sfd.milestones.clear();
        if (!j.at("sfd").is_array()) throw std::invalid_argument("config: bad value for \"sfd\"");
        for (const auto& m : j.at("sfd")) {
            if (!m.is_array() || m.size() != 2 || !m[0].is_number_integer() ||
                !m[1].is_number_integer())
                throw std::invalid_argument("config: \"sfd\" entries must be [start_epoch, k]");
            c.sfd.milestones.emplace_back(m[0].get<int>(), m[1].get<int>());
        }
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        if (!o.is_object()) throw std::invalid_argument("config: bad value for \"optimizer\"");
        detail::reject_unknown_keys(
            o, {"momentum", "learning_rate", "decay_milestones", "decay_factors"}, "optimizer.");
        c.optimizer.momentum =
            detail::config_get<double>(o, "momentum", "optimizer.", c.optimizer.momentum);
        c.optimizer.learning_rate =
            detail::config_get<double>(o, "learning_rate", "optimizer.", c.optimizer.learning_rate);
        c.optimizer.decay_milestones = detail::config_get<std::vector<int>>(
            o, "decay_milestones", "optimizer.", c.optimizer.decay_milestones);
        c.optimizer.decay_factors = detail::config_get<std::vector<double>>(
            o, "decay_factors", "optimizer.", c.optimizer.decay_factors);
    }
    if (j.contains("augmentation")) {
        const json& a = j.at("augmentation");
        if (!a.is_object()) throw std::invalid_argument("config: bad value for \"augmentation\"");
        detail::reject_unknown_keys(a, {"noise_std", "dropout_prob"}, "augmentation.");
        c.augmentation.noise_std =
            detail::config_get<double>(a, "noise_std", "augmentation.", c.augmentation.noise_std);
        c.augmentation.dropout_prob = detail::config_get<double>(a, "dropout_prob", "augmentation.",
                                                                 c.augmentation.dropout_prob);
    }
    return c;
}

inline json train_config_to_json(const TrainConfig& c) {
    json j;
    j["d"] = c.d;
    j["tau"] = c.tau;
    j["lambda_n"] = c.lambda_n;
    j["lambda_r"] = c.lambda_r;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["hist_bins"] = c.hist_bins;
    j["seed"] = c.seed;
    j["hidden"] = c.hidden;
    json sfd = json::array();
    for (auto [start, k] : c.sfd.milestones) sfd.push_back({start, k});
    j["sfd"] = sfd;
    j["optimizer"] = {{"momentum", c.optimizer.momentum},
                      {"learning_rate", c.optimizer.learning_rate},
                      {"decay_milestones", c.optimizer.decay_milestones},
                      {"decay_factors", c.optimizer.decay_factors}};
    j["augmentation"] = {{"noise_std", c.augmentation.noise_std},
                         {"dropout_prob", c.augmentation.dropout_prob}};
    j["deterministic"] = c.deterministic;
    return j;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw std::invalid_argument("config: " + path.string() + " is not valid JSON");
    return parse_train_config(j);
}

// ---- checkpoints: format tag, config echo, every tensor by name ----

inline constexpr const char* kCheckpointFormat = "umm-ckpt-v1";

struct Checkpoint {
    TrainConfig config;
    TrainState state;
    std::size_t input_dim = 0;
};

namespace detail {

inline json tensors_to_json(const EncoderModel& m) {
    json arr = json::array();
    for (const auto& t : tensors(m)) {
        json e;
        e["name"] = t.name;
        e["shape"] = t.shape;
        e["data"] = std::vector<double>(t.data, t.data + t.size);
        arr.push_back(std::move(e));
    }
    return arr;
}

inline void tensors_from_json(EncoderModel& m, const json& arr, const std::string& what) {
    auto refs = tensors(m);
    if (!arr.is_array() || arr.size() != refs.size())
        throw std::invalid_argument("checkpoint: " + what + " tensor list does not match model");
    for (const auto& e : arr) {
        const std::string name = e.at("name").get<std::string>();
        auto it = std::find_if(refs.begin(), refs.end(),
                               [&](const TensorRef& t) { return t.name == name; });
        if (it == refs.end())
            throw std::invalid_argument("checkpoint: unexpected " + what + " tensor \"" + name + "\"");
        auto shape = e.at("shape").get<std::vector<std::size_t>>();
        auto data = e.at("data").get<std::vector<double>>();
        if (shape != it->shape || data.size() != it->size)
            throw std::invalid_argument("checkpoint: shape mismatch for \"" + name + "\"");
        std::copy(data.begin(), data.end(), it->data);
        it->name.clear();  // consume, so duplicates are caught
    }
}

}  // namespace detail

inline std::string checkpoint_to_string(const TrainState& state, const TrainConfig& cfg,
                                        std::size_t input_dim) {
    json j;
    j["format"] = kCheckpointFormat;
    j["input_dim"] = input_dim;
    j["epoch"] = state.epoch;
    j["config"] = train_config_to_json(cfg);
    j["rng"] = state.rng.state();
    j["params"] = detail::tensors_to_json(state.model);
    j["momentum"] = detail::tensors_to_json(state.momentum);
    return j.dump() + "\n";
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                            const TrainConfig& cfg, std::size_t input_dim) {
    write_atomic(path, checkpoint_to_string(state, cfg, input_dim));
}

inline Checkpoint parse_checkpoint(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw std::invalid_argument("checkpoint: not valid JSON");
    if (!j.is_object() || !j.contains("format") || j.at("format") != kCheckpointFormat)
        throw std::invalid_argument(std::string("checkpoint: expected format tag \"") +
                                    kCheckpointFormat + "\"");
    Checkpoint c;
    try {
        c.config = parse_train_config(j.at("config"));
        c.input_dim = j.at("input_dim").get<std::size_t>();
        c.state.epoch = j.at("epoch").get<int>();
        Rng rng;
        c.state.model = init_encoder(c.input_dim, c.config.hidden, c.config.d, rng);
        c.state.momentum = zeros_like(c.state.model);
        detail::tensors_from_json(c.state.model, j.at("params"), "parameter");
        detail::tensors_from_json(c.state.momentum, j.at("momentum"), "momentum");
        c.state.rng.set_state(j.at("rng").get<std::string>());
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("checkpoint: ") + e.what());
    }
    return c;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return parse_checkpoint(read_file(path));
}

// ---- tabular exports ----

inline std::string history_to_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,l_s,l_n,l_r,total,mean_sigma,knn_acc\n";
    for (const auto& r : history) {
        out += std::to_string(r.epoch);
        for (double v : {r.l_s, r.l_n, r.l_r, r.total, r.mean_sigma}) {
            out += ',';
            out += format_double(v);
        }
        out += ',';
        if (r.knn_acc) out += format_double(*r.knn_acc);
        out += '\n';
    }
    return out;
}

inline void write_history(const std::filesystem::path& path,
                          const std::vector<EpochRecord>& history) {
    write_atomic(path, history_to_csv(history));
}

inline std::string metrics_to_csv(const std::vector<std::pair<std::string, double>>& metrics) {
    std::string out = "metric,value\n";
    for (const auto& [name, value] : metrics) {
        out += name;
        out += ',';
        out += format_double(value);
        out += '\n';
    }
    return out;
}

inline std::string histogram_to_csv(const Vec& centers, const std::vector<std::size_t>& counts) {
    std::string out = "bin_center,count\n";
    for (std::size_t b = 0; b < centers.size(); ++b) {
        out += format_double(centers[b]);
        out += ',';
        out += std::to_string(counts[b]);
        out += '\n';
    }
    return out;
}

inline std::string embeddings_to_jsonl(const EmbeddingTable& t) {
    std::string out;
    for (std::size_t r = 0; r < t.features.rows; ++r) {
        json j;
        j["mu"] = std::vector<double>(t.features.row(r), t.features.row(r) + t.features.cols);
        j["sigma"] = t.sigmas.rows
                         ? std::vector<double>(t.sigmas.row(r), t.sigmas.row(r) + t.sigmas.cols)
                         : std::vector<double>{};
        j["label"] = t.labels[r];
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace umm
