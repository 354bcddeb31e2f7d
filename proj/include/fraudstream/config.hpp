#pragma once

// Experiment configuration: one JSON document, every field optional, unknown
// fields rejected. to_json writes every field, so a saved config documents
// the run completely.

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fraudstream/error.hpp"
#include "fraudstream/generator.hpp"
#include "fraudstream/learner.hpp"
#include "fraudstream/streaming.hpp"

namespace fraudstream {

struct ReplayConfig {
    double rate = 100.0;   // rows per simulated second (WALL mode)
    double speedup = 1.0;  // divides wall-clock pacing (WALL mode)
};

struct BrokerConfig {
    std::size_t partitions = 4;
    Duration retention = seconds_per_day;
};

struct RunConfig {
    GeneratorConfig generator;
    std::optional<std::string> dataset; // read this file instead of generating
    ReplayConfig replay;
    BrokerConfig broker;
    StreamConfig stream;
    EnsembleConfig ensemble;
    TreeParams learner;
    double risk_alpha = RiskDictionary::default_alpha;
    std::size_t metrics_k = 100;
    std::vector<std::uint64_t> seeds{1};
    std::optional<std::size_t> threads; // overrides FRAUDSTREAM_THREADS
    bool save_model = false;
    std::string output_dir = "runs/default";

    void validate() const {
        generator.validate();
        stream.validate();
        ensemble.validate();
        learner.validate();
        const auto fail = [](const std::string& m) { throw Error(ErrorCode::config_error, m); };
        if (!(replay.rate > 0.0)) fail("replay: rate must be positive");
        if (!(replay.speedup > 0.0)) fail("replay: speedup must be positive");
        if (broker.partitions == 0) fail("broker: partitions must be at least 1");
        if (broker.retention <= 0) fail("broker: retention must be positive");
        if (!(risk_alpha > 0.0)) fail("learner: risk_alpha must be positive");
        if (metrics_k == 0) fail("metrics: k must be at least 1");
        if (seeds.empty()) fail("seeds must not be empty");
        if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds must be distinct");
        if (threads && *threads == 0) fail("threads must be at least 1");
        if (output_dir.empty()) fail("output_dir must not be empty");
    }

    EngineConfig engine(std::uint64_t seed) const {
        EngineConfig e;
        e.stream = stream;
        e.ensemble = ensemble;
        e.tree = learner;
        e.seed = seed;
        e.risk_alpha = risk_alpha;
        e.threads = threads.value_or(configured_threads());
        return e;
    }
};

namespace detail {

// Reads known keys from one JSON object and rejects the rest.
class Fields {
public:
    Fields(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw Error(ErrorCode::config_error, where_ + ": expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw Error(ErrorCode::config_error, where_ + "." + key + ": wrong type");
        }
    }

    template <typename T>
    void get_optional(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        if (it->is_null()) {
            out.reset();
            return;
        }
        T value{};
        get(key, value);
        out = value;
    }

    const nlohmann::json* child(const char* key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) throw Error(ErrorCode::config_error, where_ + ": unknown field '" + key + "'");
        }
    }

private:
    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

} // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    detail::Fields root(j, "config");
    if (const auto* g = root.child("generator")) {
        detail::Fields f(*g, "generator");
        auto& x = c.generator;
        f.get("seed", x.seed);
        f.get("num_cards", x.num_cards);
        f.get("trx_per_card_per_day", x.trx_per_card_per_day);
        f.get("fraud_trx_rate", x.fraud_trx_rate);
        f.get("fraud_card_rate", x.fraud_card_rate);
        f.get("num_days", x.num_days);
        f.get_optional("drift_day", x.drift_day);
        f.get("missing_rate", x.missing_rate);
        f.get("num_categorical", x.num_categorical);
        f.get("num_numeric", x.num_numeric);
        f.get("start_timestamp", x.start_timestamp);
        f.get("fraud_signal", x.fraud_signal);
        f.get("max_fraud_days", x.max_fraud_days);
        f.finish();
    }
    root.get_optional("dataset", c.dataset);
    if (const auto* r = root.child("replay")) {
        detail::Fields f(*r, "replay");
        f.get("rate", c.replay.rate);
        f.get("speedup", c.replay.speedup);
        f.finish();
    }
    if (const auto* b = root.child("broker")) {
        detail::Fields f(*b, "broker");
        f.get("partitions", c.broker.partitions);
        f.get("retention", c.broker.retention);
        f.finish();
    }
    if (const auto* s = root.child("stream")) {
        detail::Fields f(*s, "stream");
        f.get("batch_duration", c.stream.batch_duration);
        f.get("top_n", c.stream.top_n);
        f.get("windows", c.stream.windows.windows);
        f.get("category_attribute", c.stream.windows.category_attribute);
        f.get("max_queue_delay", c.stream.max_queue_delay);
        std::string mode = to_string(c.stream.time_mode);
        f.get("time_mode", mode);
        c.stream.time_mode = time_mode_from_string(mode);
        f.get("topic", c.stream.topic);
        f.finish();
    }
    if (const auto* e = root.child("ensemble")) {
        detail::Fields f(*e, "ensemble");
        auto& x = c.ensemble;
        f.get("feedback_window_days", x.feedback_window_days);
        f.get("delayed_window_days", x.delayed_window_days);
        f.get("label_delay_days", x.label_delay_days);
        f.get("trees_per_partition", x.trees_per_partition);
        f.get("num_partitions", x.num_partitions);
        f.get("w_a", x.w_a);
        f.get("genuine_ratio", x.genuine_ratio);
        f.get("balanced_feedback", x.balanced_feedback);
        f.finish();
    }
    if (const auto* l = root.child("learner")) {
        detail::Fields f(*l, "learner");
        f.get("max_depth", c.learner.max_depth);
        f.get("min_samples_leaf", c.learner.min_samples_leaf);
        f.get("features_per_split", c.learner.features_per_split);
        f.get("risk_alpha", c.risk_alpha);
        f.finish();
    }
    if (const auto* m = root.child("metrics")) {
        detail::Fields f(*m, "metrics");
        f.get("k", c.metrics_k);
        f.finish();
    }
    root.get("seeds", c.seeds);
    root.get_optional("threads", c.threads);
    root.get("save_model", c.save_model);
    root.get("output_dir", c.output_dir);
    root.finish();
    c.validate();
    return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    using oj = nlohmann::ordered_json;
    const auto& g = c.generator;
    oj j;
    j["generator"] = {{"seed", g.seed},
                      {"num_cards", g.num_cards},
                      {"trx_per_card_per_day", g.trx_per_card_per_day},
                      {"fraud_trx_rate", g.fraud_trx_rate},
                      {"fraud_card_rate", g.fraud_card_rate},
                      {"num_days", g.num_days},
                      {"drift_day", g.drift_day ? oj(*g.drift_day) : oj(nullptr)},
                      {"missing_rate", g.missing_rate},
                      {"num_categorical", g.num_categorical},
                      {"num_numeric", g.num_numeric},
                      {"start_timestamp", g.start_timestamp},
                      {"fraud_signal", g.fraud_signal},
                      {"max_fraud_days", g.max_fraud_days}};
    j["dataset"] = c.dataset ? oj(*c.dataset) : oj(nullptr);
    j["replay"] = {{"rate", c.replay.rate}, {"speedup", c.replay.speedup}};
    j["broker"] = {{"partitions", c.broker.partitions}, {"retention", c.broker.retention}};
    j["stream"] = {{"batch_duration", c.stream.batch_duration},
                   {"top_n", c.stream.top_n},
                   {"windows", c.stream.windows.windows},
                   {"category_attribute", c.stream.windows.category_attribute},
                   {"max_queue_delay", c.stream.max_queue_delay},
                   {"time_mode", to_string(c.stream.time_mode)},
                   {"topic", c.stream.topic}};
    const auto& e = c.ensemble;
    j["ensemble"] = {{"feedback_window_days", e.feedback_window_days},
                     {"delayed_window_days", e.delayed_window_days},
                     {"label_delay_days", e.label_delay_days},
                     {"trees_per_partition", e.trees_per_partition},
                     {"num_partitions", e.num_partitions},
                     {"w_a", e.w_a},
                     {"genuine_ratio", e.genuine_ratio},
                     {"balanced_feedback", e.balanced_feedback}};
    j["learner"] = {{"max_depth", c.learner.max_depth},
                    {"min_samples_leaf", c.learner.min_samples_leaf},
                    {"features_per_split", c.learner.features_per_split},
                    {"risk_alpha", c.risk_alpha}};
    j["metrics"] = {{"k", c.metrics_k}};
    j["seeds"] = c.seeds;
    j["threads"] = c.threads ? oj(*c.threads) : oj(nullptr);
    j["save_model"] = c.save_model;
    j["output_dir"] = c.output_dir;
    return j;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::config_error, "cannot open config '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(buffer.str());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::config_error, "config '" + path + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

} // namespace fraudstream
