#pragma once

// Mini-batch detection engine.
//
// The engine consumes one broker topic in fixed-duration batches. Each batch
// reads card histories, builds features, writes the batch to the store and,
// once a model exists, scores every transaction with the feedback, delayed
// and combined models, keeping the day's top-N cards per model.
//
// At every midnight (in transaction time) the engine closes the day:
//   1. the three alert tables are flushed; the combined table is handed to
//      investigators, whose verdicts on those cards are revealed at once;
//   2. the labels of day t-d-1 mature: the preprocessing is refreshed and a
//      day forest is trained on that day and rolled into the delayed window;
//   3. the feedback forest is retrained on the investigated cards of the last
//      f days;
//   4. the store and the label vault drop what no future step can use.
//
// Labels never travel with the transactions the classifier sees. They are
// stripped at ingestion and parked in a LabelVault that only releases them
// under the two rules above, logging every release.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fraudstream/broker.hpp"
#include "fraudstream/error.hpp"
#include "fraudstream/features.hpp"
#include "fraudstream/generator.hpp"
#include "fraudstream/learner.hpp"
#include "fraudstream/preprocess.hpp"
#include "fraudstream/random.hpp"
#include "fraudstream/store.hpp"
#include "fraudstream/transaction.hpp"

namespace fraudstream {

// ---------------------------------------------------------------------------
// Configuration and report types
// ---------------------------------------------------------------------------

enum class TimeMode { simulated, wall };

inline const char* to_string(TimeMode m) { return m == TimeMode::simulated ? "SIMULATED" : "WALL"; }

inline TimeMode time_mode_from_string(const std::string& s) {
    if (s == "SIMULATED") return TimeMode::simulated;
    if (s == "WALL") return TimeMode::wall;
    throw Error(ErrorCode::config_error, "unknown time_mode '" + s + "'");
}

enum class Phase { initialization = 0, partial_ensemble = 1, fully_operational = 2 };

inline const char* to_string(Phase p) {
    switch (p) {
        case Phase::initialization: return "INITIALIZATION";
        case Phase::partial_ensemble: return "PARTIAL_ENSEMBLE";
        case Phase::fully_operational: return "FULLY_OPERATIONAL";
    }
    return "?";
}

inline Phase phase_from_string(const std::string& s) {
    if (s == "INITIALIZATION") return Phase::initialization;
    if (s == "PARTIAL_ENSEMBLE") return Phase::partial_ensemble;
    if (s == "FULLY_OPERATIONAL") return Phase::fully_operational;
    throw Error(ErrorCode::data_error, "unknown phase '" + s + "'");
}

struct StreamConfig {
    Duration batch_duration = 240;
    std::size_t top_n = 100;
    AggregationSpec windows;
    double max_queue_delay = 300.0; // seconds of scheduling delay tolerated
    TimeMode time_mode = TimeMode::simulated;
    std::string topic = "transactions";

    void validate() const {
        if (batch_duration <= 0) throw Error(ErrorCode::config_error, "stream: batch_duration must be positive");
        if (top_n == 0) throw Error(ErrorCode::config_error, "stream: top_n must be at least 1");
        if (!(max_queue_delay >= 0.0)) throw Error(ErrorCode::config_error, "stream: max_queue_delay must be non-negative");
        if (topic.empty()) throw Error(ErrorCode::config_error, "stream: topic must be named");
        windows.validate();
    }
};

struct EngineConfig {
    StreamConfig stream;
    EnsembleConfig ensemble;
    TreeParams tree;
    std::uint64_t seed = 1;
    double risk_alpha = RiskDictionary::default_alpha;
    std::size_t threads = 1;

    void validate() const {
        stream.validate();
        ensemble.validate();
        tree.validate();
        if (!(risk_alpha > 0.0)) throw Error(ErrorCode::config_error, "risk_alpha must be positive");
    }
};

struct AlertEntry {
    std::string trx_id;
    std::string card_id;
    Timestamp timestamp = 0;
    double score = 0.0;
    std::int64_t day = 0;

    bool operator==(const AlertEntry&) const = default;
};

/// Strict ranking order of alerts: higher score, then earlier timestamp,
/// then smaller trx_id.
inline bool ranks_before(const AlertEntry& a, const AlertEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.trx_id < b.trx_id;
}

/// Union of table and scored, one entry per card (its best-ranked one),
/// sorted by rank and cut to top_n.
inline std::vector<AlertEntry> merge_alerts(const std::vector<AlertEntry>& table, const std::vector<AlertEntry>& scored,
                                            std::size_t top_n) {
    std::unordered_map<std::string, AlertEntry> best;
    best.reserve(table.size() + scored.size());
    for (const auto* list : {&table, &scored}) {
        for (const auto& e : *list) {
            auto [it, inserted] = best.try_emplace(e.card_id, e);
            if (!inserted && ranks_before(e, it->second)) it->second = e;
        }
    }
    std::vector<AlertEntry> out;
    out.reserve(best.size());
    for (auto& [card, e] : best) out.push_back(std::move(e));
    std::sort(out.begin(), out.end(), ranks_before);
    if (out.size() > top_n) out.resize(top_n);
    return out;
}

struct TaskTimes {
    double read = 0.0;
    double write = 0.0;
    double feature = 0.0;
    double classify = 0.0;
    double retrain = 0.0;

    double total() const noexcept { return read + write + feature + classify + retrain; }
};

struct BatchStats {
    std::size_t index = 0;
    std::int64_t day = 0;
    Timestamp start = 0;
    std::size_t records = 0;
    double processing_time = 0.0; // seconds, as charged by the cost model
    double measured_time = 0.0;   // seconds actually spent
    double scheduling_delay = 0.0;
    Phase phase = Phase::initialization;
    bool learning = false; // a daily retrain happened inside this batch
    TaskTimes tasks;
};

/// Scheduling delay of the next batch given the current one.
inline double next_scheduling_delay(double delay, double processing_time, double batch_duration) {
    return std::max(0.0, delay + processing_time - batch_duration);
}

struct CostInput {
    std::size_t batch_index = 0;
    std::size_t records = 0;
    double measured = 0.0;
};

/// Maps a batch to the processing time charged for it. The default charges
/// the measured wall time; tests inject synthetic costs.
using CostModel = std::function<double(const CostInput&)>;

inline CostModel measured_cost() {
    return [](const CostInput& in) { return in.measured; };
}

struct ScoreRecord {
    std::int64_t day = 0;
    std::string trx_id;
    std::string card_id;
    Timestamp timestamp = 0;
    double score = 0.0;
    std::optional<double> feedback;
    std::optional<double> delayed;
};

struct DayRecord {
    std::int64_t day = 0;
    Phase phase = Phase::initialization;
    std::size_t transactions = 0;
    std::size_t scored = 0;
    std::size_t delayed_models = 0;
    bool has_feedback = false;
    std::size_t feedback_rows = 0; // labeled rows the feedback forest was trained on
    std::size_t store_rows = 0;     // at day close
    std::size_t broker_records = 0; // at day close
    std::vector<AlertEntry> alerts;          // combined model, investigated
    std::vector<AlertEntry> alerts_feedback; // feedback forest alone
    std::vector<AlertEntry> alerts_delayed;  // delayed ensemble alone
    std::vector<std::string> warnings;
};

enum class RunStatus { complete, queue_overflow };

inline const char* to_string(RunStatus s) { return s == RunStatus::complete ? "COMPLETE" : "QUEUE_OVERFLOW"; }

struct RunReport {
    RunStatus status = RunStatus::complete;
    std::string message;
    std::size_t transactions = 0;
    std::vector<BatchStats> batches;
    std::vector<DayRecord> days;
    std::vector<ScoreRecord> scores;
};

// ---------------------------------------------------------------------------
// Label custody
// ---------------------------------------------------------------------------

enum class RevealKind { feedback, delayed };

struct RevealRecord {
    RevealKind kind = RevealKind::feedback;
    std::int64_t trx_day = 0;
    std::int64_t at_day = 0;
    std::string card_id; // feedback only
    std::size_t labels = 0;
};

using RevealedLabels = std::unordered_map<std::string, Label>; // trx_id -> label

class LabelVault {
public:
    explicit LabelVault(std::size_t label_delay_days) : delay_(static_cast<std::int64_t>(label_delay_days)) {}

    void deposit(const Transaction& t, std::int64_t day, Label label) {
        by_day_[day][t.card_id].emplace_back(t.trx_id, label);
        ++held_;
    }

    void mark_alerted(std::int64_t day, const std::string& card_id) { alerted_[day].insert(card_id); }

    bool was_alerted(std::int64_t day, const std::string& card_id) const {
        const auto it = alerted_.find(day);
        return it != alerted_.end() && it->second.contains(card_id);
    }

    /// Investigator verdict: every label of `card_id` on `trx_day`. Only for
    /// cards alerted that day, and only once the day is over.
    RevealedLabels reveal_feedback(const std::string& card_id, std::int64_t trx_day, std::int64_t current_day) {
        if (current_day <= trx_day) {
            throw Error(ErrorCode::label_leak, "feedback for day " + std::to_string(trx_day) + " requested on day " +
                                                   std::to_string(current_day));
        }
        if (!was_alerted(trx_day, card_id)) {
            throw Error(ErrorCode::label_leak,
                        "feedback requested for card " + card_id + " not alerted on day " + std::to_string(trx_day));
        }
        RevealedLabels out;
        if (const auto d = by_day_.find(trx_day); d != by_day_.end()) {
            if (const auto c = d->second.find(card_id); c != d->second.end()) {
                for (const auto& [trx, label] : c->second) out.emplace(trx, label);
            }
        }
        audit_.push_back({RevealKind::feedback, trx_day, current_day, card_id, out.size()});
        return out;
    }

    /// Every label of `trx_day`, available once d full days have passed.
    RevealedLabels reveal_delayed(std::int64_t trx_day, std::int64_t current_day) {
        if (trx_day > current_day - delay_ - 1) {
            throw Error(ErrorCode::label_leak, "labels of day " + std::to_string(trx_day) + " are not mature on day " +
                                                   std::to_string(current_day));
        }
        RevealedLabels out;
        if (const auto d = by_day_.find(trx_day); d != by_day_.end()) {
            for (const auto& [card, list] : d->second) {
                for (const auto& [trx, label] : list) out.emplace(trx, label);
            }
        }
        audit_.push_back({RevealKind::delayed, trx_day, current_day, {}, out.size()});
        return out;
    }

    /// Drops labels and alert marks of days before `day`.
    void forget_before(std::int64_t day) {
        for (auto it = by_day_.begin(); it != by_day_.end() && it->first < day;) {
            for (const auto& [card, list] : it->second) held_ -= list.size();
            it = by_day_.erase(it);
        }
        alerted_.erase(alerted_.begin(), alerted_.lower_bound(day));
    }

    std::size_t held() const noexcept { return held_; }
    std::int64_t label_delay_days() const noexcept { return delay_; }
    const std::vector<RevealRecord>& audit() const noexcept { return audit_; }

private:
    std::int64_t delay_;
    using CardLabels = std::unordered_map<std::string, std::vector<std::pair<std::string, Label>>>;
    std::map<std::int64_t, CardLabels> by_day_;
    std::map<std::int64_t, std::set<std::string>> alerted_;
    std::vector<RevealRecord> audit_;
    std::size_t held_ = 0;
};

struct LabeledRow {
    std::shared_ptr<const AugmentedTransaction> row;
    Label label = Label::genuine;
};

/// Investigated transactions of the last f days, kept with their features so
/// the feedback forest can be retrained after the store has been pruned.
class FeedbackLedger {
public:
    void add(std::int64_t day, LabeledRow row) { days_[day].push_back(std::move(row)); }

    std::vector<LabeledRow> rows(std::int64_t first_day, std::int64_t last_day) const {
        std::vector<LabeledRow> out;
        for (auto it = days_.lower_bound(first_day); it != days_.end() && it->first <= last_day; ++it) {
            out.insert(out.end(), it->second.begin(), it->second.end());
        }
        return out;
    }

    void evict_before(std::int64_t day) { days_.erase(days_.begin(), days_.lower_bound(day)); }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& [day, rows] : days_) n += rows.size();
        return n;
    }

    std::vector<std::int64_t> days() const {
        std::vector<std::int64_t> out;
        for (const auto& [day, rows] : days_) out.push_back(day);
        return out;
    }

private:
    std::map<std::int64_t, std::vector<LabeledRow>> days_;
};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

/// FRAUDSTREAM_THREADS if set to a positive integer, else 1.
inline std::size_t configured_threads() {
    if (const char* env = std::getenv("FRAUDSTREAM_THREADS")) {
        if (const auto n = parse_int(env); n && *n > 0) return static_cast<std::size_t>(*n);
    }
    return 1;
}

/// Runs fn(i) for i in [0, n) on up to `threads` threads, in contiguous chunks.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    threads = std::min(threads, n);
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::chrono::steady_clock::time_point start_;
};

inline std::string encode_payload(const Transaction& t) { return to_json(t).dump(); }

/// Produces a transaction list into a topic in event-time order, keyed by
/// card, with the transaction timestamp as produce time.
class TransactionFeeder {
public:
    TransactionFeeder(Broker& broker, std::string topic, const std::vector<Transaction>& transactions)
        : broker_(broker), topic_(std::move(topic)), transactions_(transactions) {
        if (!std::is_sorted(transactions_.begin(), transactions_.end(),
                            [](const Transaction& a, const Transaction& b) { return a.timestamp < b.timestamp; })) {
            throw Error(ErrorCode::data_error, "transactions must be in nondecreasing timestamp order");
        }
    }

    std::optional<Timestamp> next_timestamp() const {
        if (exhausted()) return std::nullopt;
        return transactions_[next_].timestamp;
    }

    /// Produces every pending transaction with timestamp < end.
    std::size_t feed_before(Timestamp end) {
        std::size_t n = 0;
        while (next_ < transactions_.size() && transactions_[next_].timestamp < end) {
            const auto& t = transactions_[next_++];
            broker_.produce(topic_, t.card_id, encode_payload(t), t.timestamp);
            ++n;
        }
        return n;
    }

    bool exhausted() const noexcept { return next_ >= transactions_.size(); }

private:
    Broker& broker_;
    std::string topic_;
    const std::vector<Transaction>& transactions_;
    std::size_t next_ = 0;
};

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

class StreamEngine {
public:
    /// Called with every transaction right before it is scored.
    using ClassifyHook = std::function<void(const Transaction&, std::int64_t day)>;

    StreamEngine(Broker& broker, Schema schema, EngineConfig config, CostModel cost = measured_cost())
        : broker_(broker), schema_(schema), config_(validated(std::move(config))), cost_(std::move(cost)),
          vault_(config_.ensemble.label_delay_days),
          ensemble_(config_.ensemble.delayed_window_days, config_.ensemble.w_a) {
        if (config_.stream.windows.category_attribute >= std::max<std::size_t>(schema_.num_categorical, 1)) {
            throw Error(ErrorCode::config_error, "aggregated category attribute is not in the schema");
        }
        const auto& topic = broker_.topic(config_.stream.topic);
        offsets_.assign(topic.num_partitions(), 0);
        for (std::size_t p = 0; p < offsets_.size(); ++p) offsets_[p] = topic.next_offset(p) - topic.partition_size(p);
    }

    void set_classify_hook(ClassifyHook hook) { on_classify_ = std::move(hook); }

    /// Simulated time: batches are cut on a virtual clock starting at the
    /// first transaction's midnight; before every poll the feeder publishes
    /// the transactions whose timestamp falls before the batch end.
    RunReport run(TransactionFeeder& feeder) {
        if (config_.stream.time_mode != TimeMode::simulated) {
            throw Error(ErrorCode::config_error, "feeder-driven runs need SIMULATED time mode");
        }
        const auto first = feeder.next_timestamp();
        if (!first) return finish();
        const Timestamp origin = day_start(day_of(*first));
        for (std::size_t i = 0;; ++i) {
            const Timestamp start = origin + Timestamp(i) * config_.stream.batch_duration;
            const Timestamp end = start + config_.stream.batch_duration;
            feeder.feed_before(end);
            const bool more = process_batch(start, end);
            if (!more) break;
            if (feeder.exhausted() && pending() == 0) break;
        }
        return finish();
    }

    /// Wall-clock mode: a replay thread publishes the file at its configured
    /// pace while the engine polls every batch_duration / speedup seconds.
    RunReport run(const Replayer& replayer, double speedup) {
        if (!(speedup > 0.0)) throw Error(ErrorCode::invalid_argument, "speedup must be positive");
        std::atomic<bool> replay_done{false};
        std::exception_ptr replay_error;
        std::thread producer([&] {
            try {
                replayer.run([&](const Transaction& t, double) {
                    broker_.produce(config_.stream.topic, t.card_id, encode_payload(t), t.timestamp);
                });
            } catch (...) {
                replay_error = std::current_exception();
            }
            replay_done = true;
        });
        const auto tick = std::chrono::duration<double>(double(config_.stream.batch_duration) / speedup);
        auto next = std::chrono::steady_clock::now();
        Timestamp virtual_start = 0;
        try {
            for (;;) {
                next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(tick);
                std::this_thread::sleep_until(next);
                const bool finished = replay_done.load();
                if (!process_batch(virtual_start, virtual_start + config_.stream.batch_duration)) break;
                virtual_start += config_.stream.batch_duration;
                if (finished && pending() == 0) break;
            }
        } catch (...) {
            producer.join();
            throw;
        }
        producer.join();
        if (replay_error) std::rethrow_exception(replay_error);
        return finish();
    }

    // Introspection, mostly for tests.
    const TransactionStore& store() const noexcept { return store_; }
    const LabelVault& vault() const noexcept { return vault_; }
    const FeedbackLedger& ledger() const noexcept { return ledger_; }
    const EnsembleModel& ensemble() const noexcept { return ensemble_; }
    const std::optional<Preprocessor>& preprocessing() const noexcept { return preprocessing_; }
    Phase phase() const noexcept { return phase_; }
    std::optional<std::int64_t> current_day() const noexcept { return current_day_; }
    const RunReport& report() const noexcept { return report_; }
    std::size_t feature_size() const noexcept { return encoded_size(schema_) + config_.stream.windows.engineered_size(); }

private:
    static EngineConfig validated(EngineConfig c) {
        c.validate();
        return c;
    }

    struct Incoming {
        Transaction trx; // label already stripped
        std::int64_t day = 0;
    };

    std::size_t pending() const {
        const auto& topic = broker_.topic(config_.stream.topic);
        std::size_t n = 0;
        for (std::size_t p = 0; p < offsets_.size(); ++p) n += topic.next_offset(p) - offsets_[p];
        return n;
    }

    std::vector<Incoming> poll_all() {
        std::vector<Record> records;
        for (std::size_t p = 0; p < offsets_.size(); ++p) {
            auto part = broker_.poll(config_.stream.topic, p, offsets_[p], std::numeric_limits<std::size_t>::max());
            if (!part.empty()) offsets_[p] = part.back().offset + 1;
            records.insert(records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
        }
        std::vector<Incoming> out;
        out.reserve(records.size());
        for (const auto& r : records) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(r.payload);
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorCode::data_error, std::string("malformed record payload: ") + e.what());
            }
            Incoming in{transaction_from_json(j, schema_), 0};
            if (!first_day_) first_day_ = day_of(in.trx.timestamp);
            in.day = day_of(in.trx.timestamp) - *first_day_;
            if (in.day < 0) throw Error(ErrorCode::data_error, "transaction " + in.trx.trx_id + " precedes the stream start");
            if (in.trx.true_label) vault_.deposit(in.trx, in.day, *in.trx.true_label);
            in.trx.true_label.reset();
            out.push_back(std::move(in));
        }
        std::stable_sort(out.begin(), out.end(), [](const Incoming& a, const Incoming& b) {
            if (a.trx.timestamp != b.trx.timestamp) return a.trx.timestamp < b.trx.timestamp;
            return a.trx.trx_id < b.trx.trx_id;
        });
        return out;
    }

    /// Returns false once the run must stop.
    bool process_batch(Timestamp start, Timestamp end) {
        Stopwatch watch;
        BatchStats stats;
        stats.index = report_.batches.size();
        stats.start = start;
        stats.scheduling_delay = delay_;

        auto incoming = poll_all();
        stats.records = incoming.size();
        report_.transactions += incoming.size();

        // Split at midnights so each group is processed under its own day.
        std::size_t begin = 0;
        while (begin < incoming.size()) {
            const auto day = incoming[begin].day;
            std::size_t stop = begin;
            while (stop < incoming.size() && incoming[stop].day == day) ++stop;
            if (day < current_day_.value_or(day)) {
                throw Error(ErrorCode::data_error, "transaction " + incoming[begin].trx.trx_id + " arrived after its day closed");
            }
            advance_to(day, stats);
            process_group(std::span(incoming).subspan(begin, stop - begin), stats);
            begin = stop;
        }
        broker_.retention_sweep(config_.stream.topic, end);

        stats.day = current_day_.value_or(0);
        stats.phase = phase_;
        stats.measured_time = watch.seconds();
        stats.processing_time = cost_({stats.index, stats.records, stats.measured_time});
        delay_ = next_scheduling_delay(delay_, stats.processing_time, double(config_.stream.batch_duration));
        report_.batches.push_back(stats);
        if (delay_ > config_.stream.max_queue_delay) {
            report_.status = RunStatus::queue_overflow;
            report_.message = "scheduling delay " + format_double(delay_) + " s after batch " +
                              std::to_string(stats.index) + " exceeds " + format_double(config_.stream.max_queue_delay) + " s";
            return false;
        }
        return true;
    }

    void process_group(std::span<Incoming> group, BatchStats& stats) {
        const auto& spec = config_.stream.windows;
        const std::size_t threads = std::max<std::size_t>(1, config_.threads);

        // Read: one history query per card, covering every transaction of the
        // card in this batch. Nothing of the batch is in the store yet, so two
        // transactions of one card see the same history.
        Stopwatch read_watch;
        std::map<std::string, std::pair<Timestamp, Timestamp>> span_of; // card -> (min ts, max ts)
        for (const auto& in : group) {
            auto [it, inserted] = span_of.try_emplace(in.trx.card_id, in.trx.timestamp, in.trx.timestamp);
            if (!inserted) {
                it->second.first = std::min(it->second.first, in.trx.timestamp);
                it->second.second = std::max(it->second.second, in.trx.timestamp);
            }
        }
        std::vector<std::string> cards;
        for (const auto& [card, range] : span_of) cards.push_back(card);
        std::vector<std::vector<StoredRow>> histories(cards.size());
        std::vector<std::optional<CardProfile>> profiles(cards.size());
        parallel_for(cards.size(), threads, [&](std::size_t i) {
            const auto [lo, hi] = span_of.at(cards[i]);
            histories[i] = store_.query_card_window(cards[i], hi, spec.max_window() + (hi - lo));
            profiles[i] = store_.profile(cards[i]);
        });
        std::unordered_map<std::string, std::size_t> card_index;
        for (std::size_t i = 0; i < cards.size(); ++i) card_index.emplace(cards[i], i);
        stats.tasks.read += read_watch.seconds();

        Stopwatch feature_watch;
        std::vector<AugmentedTransaction> augmented(group.size());
        parallel_for(group.size(), threads, [&](std::size_t i) {
            const auto c = card_index.at(group[i].trx.card_id);
            auto& aug = augmented[i];
            aug.base = group[i].trx;
            aug.engineered = aggregate(aug.base, histories[c], spec, profiles[c]);
            if (preprocessing_) aug.encoded_raw = encode(aug.base, preprocessing_->dictionary, preprocessing_->medians);
        });
        stats.tasks.feature += feature_watch.seconds();

        Stopwatch write_watch;
        std::vector<std::shared_ptr<const AugmentedTransaction>> rows;
        rows.reserve(group.size());
        for (auto& aug : augmented) {
            auto row = StoredRow::from(std::move(aug));
            rows.push_back(row.augmented);
            store_.insert(std::move(row));
        }
        stats.tasks.write += write_watch.seconds();

        auto& day = report_.days.back();
        day.transactions += group.size();
        if (!ensemble_.ready()) return;

        Stopwatch classify_watch;
        std::vector<ComponentScores> scores(rows.size());
        if (on_classify_) {
            for (const auto& r : rows) on_classify_(r->base, *current_day_);
        }
        parallel_for(rows.size(), threads, [&](std::size_t i) { scores[i] = ensemble_.score(rows[i]->features()); });
        std::vector<AlertEntry> combined, feedback, delayed;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& t = rows[i]->base;
            const auto& s = scores[i];
            combined.push_back({t.trx_id, t.card_id, t.timestamp, s.combined, *current_day_});
            if (s.feedback) feedback.push_back({t.trx_id, t.card_id, t.timestamp, *s.feedback, *current_day_});
            if (s.delayed) delayed.push_back({t.trx_id, t.card_id, t.timestamp, *s.delayed, *current_day_});
            report_.scores.push_back({*current_day_, t.trx_id, t.card_id, t.timestamp, s.combined, s.feedback, s.delayed});
        }
        const auto n = config_.stream.top_n;
        day.alerts = merge_alerts(day.alerts, combined, n);
        day.alerts_feedback = merge_alerts(day.alerts_feedback, feedback, n);
        day.alerts_delayed = merge_alerts(day.alerts_delayed, delayed, n);
        day.scored += rows.size();
        stats.tasks.classify += classify_watch.seconds();
    }

    void open_day(std::int64_t day) {
        current_day_ = day;
        DayRecord record;
        record.day = day;
        record.phase = phase_;
        record.delayed_models = ensemble_.delayed().size();
        record.has_feedback = ensemble_.has_feedback();
        record.feedback_rows = feedback_rows_;
        report_.days.push_back(std::move(record));
    }

    void close_day() {
        auto& record = report_.days.back();
        record.store_rows = store_.size();
        record.broker_records = broker_.topic(config_.stream.topic).record_count();
        for (const auto& a : record.alerts) vault_.mark_alerted(record.day, a.card_id);
    }

    void advance_to(std::int64_t day, BatchStats& stats) {
        if (!current_day_) {
            open_day(day);
            return;
        }
        while (*current_day_ < day) {
            Stopwatch watch;
            close_day();
            rollover(*current_day_ + 1);
            stats.tasks.retrain += watch.seconds();
            stats.learning = true;
        }
    }

    RunReport finish() {
        if (current_day_ && !closed_) {
            close_day();
            closed_ = true;
        }
        return report_;
    }

    void warn(std::vector<std::string>& sink, std::string message) { sink.push_back(std::move(message)); }

    void rollover(std::int64_t t) {
        const auto& ens = config_.ensemble;
        const auto d = static_cast<std::int64_t>(ens.label_delay_days);
        const auto f = static_cast<std::int64_t>(ens.feedback_window_days);
        const std::int64_t closed_day = t - 1;
        std::vector<std::string> warnings;

        // Investigator feedback on yesterday's alerted cards.
        for (const auto& alert : report_.days.back().alerts) {
            const auto labels = vault_.reveal_feedback(alert.card_id, closed_day, t);
            const auto history = store_.query_card_window(alert.card_id, day_start(*first_day_ + t), seconds_per_day);
            for (const auto& row : history) {
                const auto it = labels.find(row.trx_id());
                if (it != labels.end()) ledger_.add(closed_day, {row.augmented, it->second});
            }
        }

        // Matured labels: refresh preprocessing and train the day forest.
        const std::int64_t s = t - d - 1;
        if (s >= 0) {
            const auto labels = vault_.reveal_delayed(s, t);
            const auto day_rows = store_.scan_range(day_start(*first_day_ + s), day_start(*first_day_ + s + 1));
            std::vector<LabeledRow> labeled;
            std::vector<Transaction> labeled_trx;
            for (const auto& row : day_rows) {
                const auto it = labels.find(row.trx_id());
                if (it == labels.end()) continue;
                labeled.push_back({row.augmented, it->second});
                labeled_trx.push_back(row.augmented->base);
                labeled_trx.back().true_label = it->second;
            }
            if (!labeled.empty()) {
                refresh_preprocessing(labeled_trx, warnings);
                try {
                    auto forest = train_forest(labeled, derive_seed(derive_seed(config_.seed, 0xDE1A), std::uint64_t(s)), s, true);
                    ensemble_.roll_delayed(std::move(forest));
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::fraud_starvation && e.code() != ErrorCode::invalid_argument) throw;
                    warn(warnings, "day " + std::to_string(s) + ": delayed forest skipped (" + e.what() + ")");
                }
            } else {
                warn(warnings, "day " + std::to_string(s) + ": no labeled transactions for the delayed forest");
            }
        }

        // Feedback forest on the investigated cards of days [t-f, t-1].
        ledger_.evict_before(t - f);
        const auto feedback_rows = ledger_.rows(t - f, t - 1);
        if (!feedback_rows.empty() && preprocessing_) {
            try {
                auto forest = train_forest(feedback_rows, derive_seed(derive_seed(config_.seed, 0xFEED), std::uint64_t(t)), t,
                                           ens.balanced_feedback);
                ensemble_.set_feedback(std::move(forest));
                feedback_rows_ = feedback_rows.size();
            } catch (const Error& e) {
                if (e.code() != ErrorCode::fraud_starvation && e.code() != ErrorCode::invalid_argument) throw;
                warn(warnings, "day " + std::to_string(t) + ": feedback forest not retrained (" + e.what() + ")");
            }
        }

        // Memory bounds: the store keeps the widest feature window and every
        // day whose labels are still to mature; the vault keeps unmatured days.
        const Timestamp keep_from = std::min(day_start(*first_day_ + t - d), day_start(*first_day_ + t) - config_.stream.windows.max_window());
        store_.prune(keep_from);
        vault_.forget_before(t - d);

        if (ensemble_.has_delayed()) {
            const Phase computed = ensemble_.delayed().size() >= ens.delayed_window_days ? Phase::fully_operational
                                                                                         : Phase::partial_ensemble;
            phase_ = std::max(phase_, computed);
        }
        open_day(t);
        auto& today = report_.days.back().warnings;
        today.insert(today.end(), warnings.begin(), warnings.end());
    }

    void refresh_preprocessing(const std::vector<Transaction>& labeled, std::vector<std::string>& warnings) {
        try {
            if (!preprocessing_) {
                preprocessing_ = fit(labeled, schema_, config_.risk_alpha);
            } else {
                preprocessing_->dictionary.accumulate(labeled);
                preprocessing_->medians = fit_medians(labeled, schema_);
            }
        } catch (const Error& e) {
            if (e.code() != ErrorCode::invalid_argument) throw;
            warn(warnings, std::string("preprocessing not refreshed (") + e.what() + ")");
        }
    }

    /// Training rows are re-encoded with the current preprocessing; the
    /// engineered part is the one computed when the row was ingested.
    BalancedForest train_forest(const std::vector<LabeledRow>& rows, std::uint64_t seed, std::int64_t day, bool balanced) {
        const auto& ens = config_.ensemble;
        Dataset data(feature_size());
        std::vector<double> x;
        for (const auto& r : rows) {
            x = encode(r.row->base, preprocessing_->dictionary, preprocessing_->medians);
            x.insert(x.end(), r.row->engineered.begin(), r.row->engineered.end());
            data.add(x, r.label);
        }
        if (!balanced) {
            std::vector<std::size_t> all(data.size());
            std::iota(all.begin(), all.end(), std::size_t{0});
            return train_random_forest(data, all, ens.trees_per_partition * ens.num_partitions, config_.tree, seed, day);
        }
        std::vector<std::size_t> frauds;
        std::vector<std::vector<std::size_t>> genuine(ens.num_partitions);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (is_fraud(rows[i].label)) frauds.push_back(i);
            else genuine[stable_hash(rows[i].row->base.card_id) % ens.num_partitions].push_back(i);
        }
        ForestParams params{ens.trees_per_partition, ens.genuine_ratio, config_.tree};
        return train_balanced_forest(data, frauds, genuine, params, seed, day, std::max<std::size_t>(1, config_.threads));
    }

    Broker& broker_;
    Schema schema_;
    EngineConfig config_;
    CostModel cost_;
    ClassifyHook on_classify_;

    std::vector<std::uint64_t> offsets_;
    TransactionStore store_;
    LabelVault vault_;
    FeedbackLedger ledger_;
    EnsembleModel ensemble_;
    std::optional<Preprocessor> preprocessing_;

    std::optional<std::int64_t> first_day_; // absolute day of the first transaction
    std::optional<std::int64_t> current_day_;
    Phase phase_ = Phase::initialization;
    std::size_t feedback_rows_ = 0;
    double delay_ = 0.0;
    bool closed_ = false;
    RunReport report_;
};

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const AlertEntry& a) {
    return {{"trx_id", a.trx_id}, {"card_id", a.card_id}, {"timestamp", a.timestamp}, {"score", a.score}, {"day", a.day}};
}

inline AlertEntry alert_from_json(const nlohmann::json& j) {
    return {j.at("trx_id").get<std::string>(), j.at("card_id").get<std::string>(), j.at("timestamp").get<Timestamp>(),
            j.at("score").get<double>(), j.at("day").get<std::int64_t>()};
}

inline nlohmann::ordered_json to_json(const BatchStats& b) {
    return {{"index", b.index},
            {"day", b.day},
            {"start", b.start},
            {"records", b.records},
            {"processing_time", b.processing_time},
            {"measured_time", b.measured_time},
            {"scheduling_delay", b.scheduling_delay},
            {"phase", to_string(b.phase)},
            {"learning", b.learning},
            {"read", b.tasks.read},
            {"write", b.tasks.write},
            {"feature", b.tasks.feature},
            {"classify", b.tasks.classify},
            {"retrain", b.tasks.retrain}};
}

inline BatchStats batch_from_json(const nlohmann::json& j) {
    BatchStats b;
    b.index = j.at("index").get<std::size_t>();
    b.day = j.at("day").get<std::int64_t>();
    b.start = j.at("start").get<Timestamp>();
    b.records = j.at("records").get<std::size_t>();
    b.processing_time = j.at("processing_time").get<double>();
    b.measured_time = j.at("measured_time").get<double>();
    b.scheduling_delay = j.at("scheduling_delay").get<double>();
    b.phase = phase_from_string(j.at("phase").get<std::string>());
    b.learning = j.at("learning").get<bool>();
    b.tasks = {j.at("read").get<double>(), j.at("write").get<double>(), j.at("feature").get<double>(),
               j.at("classify").get<double>(), j.at("retrain").get<double>()};
    return b;
}

inline nlohmann::ordered_json to_json(const DayRecord& d) {
    const auto alerts = [](const std::vector<AlertEntry>& list) {
        auto out = nlohmann::ordered_json::array();
        for (const auto& a : list) out.push_back(to_json(a));
        return out;
    };
    return {{"day", d.day},
            {"phase", to_string(d.phase)},
            {"transactions", d.transactions},
            {"scored", d.scored},
            {"delayed_models", d.delayed_models},
            {"has_feedback", d.has_feedback},
            {"feedback_rows", d.feedback_rows},
            {"store_rows", d.store_rows},
            {"broker_records", d.broker_records},
            {"warnings", d.warnings},
            {"alerts", alerts(d.alerts)},
            {"alerts_feedback", alerts(d.alerts_feedback)},
            {"alerts_delayed", alerts(d.alerts_delayed)}};
}

inline DayRecord day_from_json(const nlohmann::json& j) {
    const auto alerts = [](const nlohmann::json& list) {
        std::vector<AlertEntry> out;
        for (const auto& a : list) out.push_back(alert_from_json(a));
        return out;
    };
    DayRecord d;
    d.day = j.at("day").get<std::int64_t>();
    d.phase = phase_from_string(j.at("phase").get<std::string>());
    d.transactions = j.at("transactions").get<std::size_t>();
    d.scored = j.at("scored").get<std::size_t>();
    d.delayed_models = j.at("delayed_models").get<std::size_t>();
    d.has_feedback = j.at("has_feedback").get<bool>();
    d.feedback_rows = j.at("feedback_rows").get<std::size_t>();
    d.store_rows = j.at("store_rows").get<std::size_t>();
    d.broker_records = j.at("broker_records").get<std::size_t>();
    d.warnings = j.at("warnings").get<std::vector<std::string>>();
    d.alerts = alerts(j.at("alerts"));
    d.alerts_feedback = alerts(j.at("alerts_feedback"));
    d.alerts_delayed = alerts(j.at("alerts_delayed"));
    return d;
}

} // namespace fraudstream
