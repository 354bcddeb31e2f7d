#pragma once

// Post-hoc evaluation of a run: card precision of the daily alert lists,
// rank-statistic AUC, earlier detection, timing summaries and a paired test
// across seeded repetitions. Everything here is a pure function of a run
// report and the ground truth.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"

#include "fraudstream/error.hpp"
#include "fraudstream/streaming.hpp"
#include "fraudstream/transaction.hpp"

namespace fraudstream {

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// Labels of a source stream, with days counted from the stream's first day.
class GroundTruth {
public:
    GroundTruth() = default;

    explicit GroundTruth(const std::vector<Transaction>& stream) {
        if (stream.empty()) return;
        Timestamp first = stream.front().timestamp;
        for (const auto& t : stream) first = std::min(first, t.timestamp);
        first_day_ = day_of(first);
        for (const auto& t : stream) add(t.trx_id, t.card_id, day_of(t.timestamp) - first_day_, t.true_label);
    }

    /// Adds one labeled transaction with an already relative day.
    void add(const std::string& trx_id, const std::string& card_id, std::int64_t day, std::optional<Label> label) {
        if (!label) return;
        const bool fraud = is_fraud(*label);
        trx_[trx_id] = fraud;
        if (!fraud) return;
        auto& span = fraud_days_[card_id];
        if (!span.first_fraud_day || day < *span.first_fraud_day) span.first_fraud_day = day;
        if (!span.last_fraud_day || day > *span.last_fraud_day) span.last_fraud_day = day;
    }

    std::optional<bool> transaction_is_fraud(const std::string& trx_id) const {
        const auto it = trx_.find(trx_id);
        if (it == trx_.end()) return std::nullopt;
        return it->second;
    }

    /// A card counts as fraudulent on `day` once it has had a fraudulent
    /// transaction on that day or before.
    bool card_is_fraud_by(const std::string& card_id, std::int64_t day) const {
        const auto it = fraud_days_.find(card_id);
        return it != fraud_days_.end() && *it->second.first_fraud_day <= day;
    }

    struct FraudSpan {
        std::optional<std::int64_t> first_fraud_day;
        std::optional<std::int64_t> last_fraud_day;
    };

    const std::unordered_map<std::string, FraudSpan>& fraud_cards() const noexcept { return fraud_days_; }
    std::int64_t first_day() const noexcept { return first_day_; }
    std::size_t labeled() const noexcept { return trx_.size(); }

private:
    std::int64_t first_day_ = 0;
    std::unordered_map<std::string, bool> trx_;
    std::unordered_map<std::string, FraudSpan> fraud_days_;
};

// ---------------------------------------------------------------------------
// Card precision
// ---------------------------------------------------------------------------

struct PrecisionResult {
    double value = 0.0;        // frauds / alerted, 0 when nothing was alerted
    double value_at_k = 0.0;   // frauds / k
    std::size_t alerted = 0;
    std::size_t frauds = 0;
    bool empty = false;        // no alerts: value defined as 0
    bool short_list = false;   // fewer than k alerts
};

inline PrecisionResult card_precision(const std::vector<AlertEntry>& alerts, const GroundTruth& truth, std::size_t k) {
    if (k == 0) throw Error(ErrorCode::invalid_argument, "k must be positive");
    if (alerts.size() > k) {
        throw Error(ErrorCode::invalid_argument,
                    std::to_string(alerts.size()) + " alerts exceed k = " + std::to_string(k));
    }
    PrecisionResult r;
    std::unordered_set<std::string> cards;
    for (const auto& a : alerts) {
        if (!cards.insert(a.card_id).second) continue;
        ++r.alerted;
        r.frauds += truth.card_is_fraud_by(a.card_id, a.day);
    }
    r.empty = r.alerted == 0;
    r.short_list = r.alerted < k;
    r.value = r.empty ? 0.0 : double(r.frauds) / double(r.alerted);
    r.value_at_k = double(r.frauds) / double(k);
    return r;
}

// ---------------------------------------------------------------------------
// AUC
// ---------------------------------------------------------------------------

enum class AucLevel { transaction, card };

struct ScoredItem {
    std::string card_id;
    double score = 0.0;
    bool fraud = false;
};

/// P(score of a random positive > score of a random negative), ties counted
/// one half, from the Mann-Whitney rank sum with midranks.
inline double auc_of(std::vector<std::pair<double, bool>> items) {
    std::size_t positives = 0;
    for (const auto& [s, y] : items) {
        if (std::isnan(s)) throw Error(ErrorCode::invalid_argument, "NaN score");
        positives += y;
    }
    const std::size_t negatives = items.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw Error(ErrorCode::degenerate, "AUC needs at least one positive and one negative");
    }
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < items.size();) {
        std::size_t j = i;
        std::size_t tied_pos = 0;
        while (j < items.size() && items[j].first == items[i].first) tied_pos += items[j++].second;
        const double midrank = 0.5 * double(i + 1 + j); // ranks i+1..j
        rank_sum += midrank * double(tied_pos);
        i = j;
    }
    const double p = double(positives);
    const double n = double(negatives);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

/// Card level reduces every card to its highest score and whether any of its
/// transactions is fraudulent.
inline double auc(const std::vector<ScoredItem>& items, AucLevel level) {
    std::vector<std::pair<double, bool>> pairs;
    if (level == AucLevel::transaction) {
        pairs.reserve(items.size());
        for (const auto& i : items) pairs.emplace_back(i.score, i.fraud);
    } else {
        std::unordered_map<std::string, std::pair<double, bool>> cards;
        for (const auto& i : items) {
            auto [it, inserted] = cards.try_emplace(i.card_id, i.score, i.fraud);
            if (!inserted) {
                it->second.first = std::max(it->second.first, i.score);
                it->second.second = it->second.second || i.fraud;
            }
        }
        for (const auto& [card, p] : cards) pairs.push_back(p);
    }
    return auc_of(std::move(pairs));
}

// ---------------------------------------------------------------------------
// Earlier detection
// ---------------------------------------------------------------------------

struct EarlierDetection {
    double rate = 0.0;
    std::size_t earlier = 0;
    std::size_t fraud_cards = 0;
};

/// Share of fraudulent cards alerted on some day d with
/// first_fraud_day <= d < last_fraud_day. Only cards whose last fraud day is
/// at or after `from_day` are counted, so cards defrauded entirely before
/// alerting began do not dilute the rate.
inline EarlierDetection earlier_detection_rate(const std::map<std::int64_t, std::vector<AlertEntry>>& alerts_by_day,
                                               const GroundTruth& truth,
                                               std::int64_t from_day = std::numeric_limits<std::int64_t>::min()) {
    EarlierDetection r;
    std::unordered_set<std::string> earlier;
    for (const auto& [day, alerts] : alerts_by_day) {
        for (const auto& a : alerts) {
            const auto it = truth.fraud_cards().find(a.card_id);
            if (it == truth.fraud_cards().end()) continue;
            if (*it->second.first_fraud_day <= day && day < *it->second.last_fraud_day) earlier.insert(a.card_id);
        }
    }
    for (const auto& [card, span] : truth.fraud_cards()) {
        if (*span.last_fraud_day < from_day) continue;
        ++r.fraud_cards;
        r.earlier += earlier.contains(card);
    }
    if (r.fraud_cards == 0) throw Error(ErrorCode::degenerate, "no fraudulent cards to detect");
    r.rate = double(r.earlier) / double(r.fraud_cards);
    return r;
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct Distribution {
    std::size_t count = 0;
    double median = 0.0;
    double p90 = 0.0; // nearest rank
    double max = 0.0;
};

inline Distribution distribution_of(std::vector<double> values) {
    Distribution d;
    d.count = values.size();
    if (values.empty()) return d;
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    d.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    const auto rank = static_cast<std::size_t>(std::ceil(0.9 * double(n)));
    d.p90 = values[std::max<std::size_t>(rank, 1) - 1];
    d.max = values.back();
    return d;
}

struct TaskShares {
    double read = 0.0;
    double write = 0.0;
    double feature = 0.0;
    double classify = 0.0;
    double model_update = 0.0;
};

inline TaskShares task_shares(const std::vector<const BatchStats*>& batches) {
    TaskTimes sum;
    for (const auto* b : batches) {
        sum.read += b->tasks.read;
        sum.write += b->tasks.write;
        sum.feature += b->tasks.feature;
        sum.classify += b->tasks.classify;
        sum.retrain += b->tasks.retrain;
    }
    const double total = sum.total();
    if (total <= 0.0) return {};
    return {sum.read / total, sum.write / total, sum.feature / total, sum.classify / total, sum.retrain / total};
}

struct PhaseTiming {
    Phase phase = Phase::initialization;
    Distribution processing_time;
    Distribution scheduling_delay;
    TaskShares shares;
};

struct TimingReport {
    std::vector<PhaseTiming> phases; // phases that occur, in order
    TaskShares overall;
    TaskShares learning_batches; // batches that included a daily retrain
    double max_scheduling_delay = 0.0;
};

inline TimingReport timing_report(const std::vector<BatchStats>& stats) {
    TimingReport r;
    std::vector<const BatchStats*> all, learning;
    for (const auto& b : stats) {
        all.push_back(&b);
        if (b.learning) learning.push_back(&b);
        r.max_scheduling_delay = std::max(r.max_scheduling_delay, b.scheduling_delay);
    }
    r.overall = task_shares(all);
    r.learning_batches = task_shares(learning);
    for (const auto phase : {Phase::initialization, Phase::partial_ensemble, Phase::fully_operational}) {
        std::vector<double> proc, delay;
        std::vector<const BatchStats*> in_phase;
        for (const auto& b : stats) {
            if (b.phase != phase) continue;
            proc.push_back(b.processing_time);
            delay.push_back(b.scheduling_delay);
            in_phase.push_back(&b);
        }
        if (in_phase.empty()) continue;
        r.phases.push_back({phase, distribution_of(std::move(proc)), distribution_of(std::move(delay)), task_shares(in_phase)});
    }
    return r;
}

// ---------------------------------------------------------------------------
// Paired comparison across seeds
// ---------------------------------------------------------------------------

struct PairedTest {
    std::size_t n = 0;
    double mean_difference = 0.0;
    double t_statistic = 0.0;
    double p_value = 1.0; // one-sided, H1: mean(a - b) > 0
};

inline PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error(ErrorCode::invalid_argument, "paired samples differ in length");
    if (a.size() < 2) throw Error(ErrorCode::degenerate, "paired test needs at least two pairs");
    PairedTest r;
    r.n = a.size();
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    double mean = 0.0;
    for (const double x : d) mean += x;
    mean /= double(r.n);
    double ss = 0.0;
    for (const double x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / double(r.n - 1));
    r.mean_difference = mean;
    if (sd == 0.0) {
        r.t_statistic = mean > 0 ? std::numeric_limits<double>::infinity()
                                 : (mean < 0 ? -std::numeric_limits<double>::infinity() : 0.0);
        r.p_value = mean > 0 ? 0.0 : (mean < 0 ? 1.0 : 0.5);
        return r;
    }
    r.t_statistic = mean / (sd / std::sqrt(double(r.n)));
    const boost::math::students_t dist(double(r.n - 1));
    r.p_value = boost::math::cdf(boost::math::complement(dist, r.t_statistic));
    return r;
}

// ---------------------------------------------------------------------------
// Run evaluation
// ---------------------------------------------------------------------------

enum class Model { ensemble = 0, feedback = 1, delayed = 2 };

inline const char* to_string(Model m) {
    switch (m) {
        case Model::ensemble: return "ensemble";
        case Model::feedback: return "feedback";
        case Model::delayed: return "delayed";
    }
    return "?";
}

inline constexpr Model all_models[] = {Model::ensemble, Model::feedback, Model::delayed};

inline const std::vector<AlertEntry>& alerts_of(const DayRecord& d, Model m) {
    switch (m) {
        case Model::feedback: return d.alerts_feedback;
        case Model::delayed: return d.alerts_delayed;
        default: return d.alerts;
    }
}

struct DailyEvaluation {
    std::int64_t day = 0;
    Phase phase = Phase::initialization;
    PrecisionResult cp[3]; // indexed by Model
};

struct PhaseMean {
    std::size_t days = 0;       // days with at least one alert for the model
    double cp = 0.0;            // mean of per-day CP over those days
    double cp_at_k = 0.0;       // mean of frauds / k over the same days
};

struct RunSummary {
    std::string status;
    std::size_t k = 0;
    std::vector<DailyEvaluation> daily;
    std::map<Phase, std::array<PhaseMean, 3>> phase_means;
    std::optional<std::int64_t> first_phase_day[3];
    std::optional<double> auc_transaction;      // fully operational days
    std::optional<double> auc_card;             // fully operational days, per card and day
    std::optional<double> auc_transaction_all;  // every scored transaction
    std::optional<EarlierDetection> earlier;
    TimingReport timing;
};

/// Alerts are evaluated against `truth`; AUC uses the combined score. Card
/// AUC reduces per (card, day) so that every daily ranking counts.
inline RunSummary evaluate(const RunReport& report, const GroundTruth& truth, std::size_t k) {
    RunSummary s;
    s.status = to_string(report.status);
    s.k = k;
    std::map<Phase, std::array<std::vector<PrecisionResult>, 3>> by_phase;
    std::map<std::int64_t, std::vector<AlertEntry>> alerts_by_day;
    std::optional<std::int64_t> first_alert_day;
    for (const auto& d : report.days) {
        DailyEvaluation e;
        e.day = d.day;
        e.phase = d.phase;
        for (const auto m : all_models) {
            const auto& list = alerts_of(d, m);
            const std::vector<AlertEntry> top(list.begin(), list.begin() + std::ptrdiff_t(std::min(k, list.size())));
            e.cp[int(m)] = card_precision(top, truth, k);
            if (!e.cp[int(m)].empty) by_phase[d.phase][int(m)].push_back(e.cp[int(m)]);
        }
        if (!s.first_phase_day[int(d.phase)]) s.first_phase_day[int(d.phase)] = d.day;
        if (!d.alerts.empty()) {
            alerts_by_day[d.day] = d.alerts;
            if (!first_alert_day) first_alert_day = d.day;
        }
        s.daily.push_back(e);
    }
    for (const auto& [phase, models] : by_phase) {
        auto& means = s.phase_means[phase];
        for (std::size_t m = 0; m < 3; ++m) {
            const auto& list = models[m];
            means[m].days = list.size();
            for (const auto& r : list) {
                means[m].cp += r.value;
                means[m].cp_at_k += r.value_at_k;
            }
            if (!list.empty()) {
                means[m].cp /= double(list.size());
                means[m].cp_at_k /= double(list.size());
            }
        }
    }

    std::unordered_map<std::int64_t, Phase> phase_of_day;
    for (const auto& d : report.days) phase_of_day[d.day] = d.phase;
    std::vector<ScoredItem> full, all_items;
    for (const auto& r : report.scores) {
        const auto label = truth.transaction_is_fraud(r.trx_id);
        if (!label) continue;
        all_items.push_back({r.card_id, r.score, *label});
        if (phase_of_day[r.day] == Phase::fully_operational) {
            full.push_back({r.card_id + "@" + std::to_string(r.day), r.score, *label});
        }
    }
    const auto try_auc = [](const std::vector<ScoredItem>& items, AucLevel level) -> std::optional<double> {
        try {
            return auc(items, level);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::degenerate) throw;
            return std::nullopt;
        }
    };
    s.auc_transaction = try_auc(full, AucLevel::transaction);
    s.auc_card = try_auc(full, AucLevel::card);
    s.auc_transaction_all = try_auc(all_items, AucLevel::transaction);
    if (first_alert_day) {
        try {
            s.earlier = earlier_detection_rate(alerts_by_day, truth, *first_alert_day);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::degenerate) throw;
        }
    }
    s.timing = timing_report(report.batches);
    return s;
}

/// Mean fully-operational CP of one model, if that phase was reached.
inline std::optional<double> phase_cp(const RunSummary& s, Phase phase, Model m) {
    const auto it = s.phase_means.find(phase);
    if (it == s.phase_means.end() || it->second[int(m)].days == 0) return std::nullopt;
    return it->second[int(m)].cp;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const Distribution& d) {
    return {{"count", d.count}, {"median", d.median}, {"p90", d.p90}, {"max", d.max}};
}

inline nlohmann::ordered_json to_json(const TaskShares& t) {
    return {{"read", t.read}, {"write", t.write}, {"feature", t.feature}, {"classify", t.classify}, {"model_update", t.model_update}};
}

inline nlohmann::ordered_json to_json(const TimingReport& r) {
    nlohmann::ordered_json j;
    auto& phases = j["phases"] = nlohmann::ordered_json::array();
    for (const auto& p : r.phases) {
        phases.push_back({{"phase", to_string(p.phase)},
                          {"processing_time", to_json(p.processing_time)},
                          {"scheduling_delay", to_json(p.scheduling_delay)},
                          {"task_shares", to_json(p.shares)}});
    }
    j["task_shares"] = to_json(r.overall);
    j["learning_batch_task_shares"] = to_json(r.learning_batches);
    j["max_scheduling_delay"] = r.max_scheduling_delay;
    return j;
}

inline nlohmann::ordered_json to_json(const RunSummary& s) {
    const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
    nlohmann::ordered_json j;
    j["status"] = s.status;
    j["k"] = s.k;
    auto& phases = j["phase_cp"] = nlohmann::ordered_json::object();
    for (const auto& [phase, means] : s.phase_means) {
        auto& p = phases[to_string(phase)];
        for (const auto m : all_models) {
            const auto& pm = means[int(m)];
            p[to_string(m)] = {{"days", pm.days}, {"cp", pm.cp}, {"cp_at_k", pm.cp_at_k}};
        }
    }
    auto& first = j["phase_start_day"] = nlohmann::ordered_json::object();
    for (const auto phase : {Phase::initialization, Phase::partial_ensemble, Phase::fully_operational}) {
        const auto& d = s.first_phase_day[int(phase)];
        first[to_string(phase)] = d ? nlohmann::ordered_json(*d) : nlohmann::ordered_json(nullptr);
    }
    j["auc_transaction_fully_operational"] = opt(s.auc_transaction);
    j["auc_card_fully_operational"] = opt(s.auc_card);
    j["auc_transaction_all"] = opt(s.auc_transaction_all);
    if (s.earlier) {
        j["earlier_detection"] = {{"rate", s.earlier->rate}, {"earlier", s.earlier->earlier}, {"fraud_cards", s.earlier->fraud_cards}};
    } else {
        j["earlier_detection"] = nullptr;
    }
    j["timing"] = to_json(s.timing);
    return j;
}

} // namespace fraudstream
