#pragma once

// Seeded synthetic card-transaction stream and a paced file replayer.
//
// Each card has a spending profile (typical log-amount, three favourite
// merchant categories, a home country). A subset of cards is compromised for a
// few consecutive days; while compromised the card transacts at twice its
// usual rate and each transaction is fraudulent with probability q. Fraudulent
// transactions carry inflated amounts, a risky merchant category, foreign
// countries and the e-commerce channel. After `drift_day` the risky category
// moves and the amount inflation shrinks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "fraudstream/error.hpp"
#include "fraudstream/random.hpp"
#include "fraudstream/transaction.hpp"

namespace fraudstream {

struct GeneratorConfig {
    std::uint64_t seed = 1;
    std::size_t num_cards = 1000;
    double trx_per_card_per_day = 4.0;
    double fraud_trx_rate = 0.004;
    double fraud_card_rate = 0.002;
    std::size_t num_days = 40;
    std::optional<std::int64_t> drift_day;
    double missing_rate = 0.02;
    std::size_t num_categorical = 3;
    std::size_t num_numeric = 4;
    Timestamp start_timestamp = 1413590400; // 2014-10-18T00:00:00Z
    // Multiplies every planted fraud effect; 1 is a moderately hard problem,
    // values around 4 make the classes nearly separable.
    double fraud_signal = 1.0;
    std::size_t max_fraud_days = 3;

    void validate() const {
        const auto fail = [](const std::string& m) { throw Error(ErrorCode::config_error, "generator: " + m); };
        if (num_cards == 0) fail("num_cards must be positive");
        if (!(trx_per_card_per_day > 0.0)) fail("trx_per_card_per_day must be positive");
        if (!(fraud_trx_rate > 0.0 && fraud_trx_rate < 1.0)) fail("fraud_trx_rate must lie in (0,1)");
        if (!(fraud_card_rate > 0.0 && fraud_card_rate < 1.0)) fail("fraud_card_rate must lie in (0,1)");
        if (num_days == 0) fail("num_days must be positive");
        if (!(missing_rate >= 0.0 && missing_rate < 1.0)) fail("missing_rate must lie in [0,1)");
        if (!(fraud_signal >= 0.0)) fail("fraud_signal must be non-negative");
        if (max_fraud_days == 0) fail("max_fraud_days must be positive");
        if (start_timestamp % seconds_per_day != 0) fail("start_timestamp must fall on a UTC midnight");
    }

    Schema schema() const { return Schema{num_categorical, num_numeric}; }
};

/// Compromise schedule derived from the configured rates.
struct FraudPlan {
    std::size_t fraud_cards = 0;
    std::size_t compromise_days = 1;
    double compromised_rate = 0.0; // transactions per day while compromised
    double fraud_probability = 0.0;
    std::vector<std::int64_t> compromise_start; // per card, -1 when never compromised
};

struct StreamSummary {
    std::size_t transactions = 0;
    std::size_t fraud_transactions = 0;
    std::size_t cards = 0;
    std::size_t fraud_cards = 0;

    double fraud_trx_rate() const { return transactions ? double(fraud_transactions) / double(transactions) : 0.0; }
    double fraud_card_rate() const { return cards ? double(fraud_cards) / double(cards) : 0.0; }
};

inline StreamSummary summarize(const std::vector<Transaction>& stream) {
    StreamSummary s;
    std::unordered_set<std::string> cards;
    std::unordered_set<std::string> fraud_cards;
    for (const auto& t : stream) {
        ++s.transactions;
        cards.insert(t.card_id);
        if (t.true_label && is_fraud(*t.true_label)) {
            ++s.fraud_transactions;
            fraud_cards.insert(t.card_id);
        }
    }
    s.cards = cards.size();
    s.fraud_cards = fraud_cards.size();
    return s;
}

class Generator {
public:
    static constexpr std::size_t num_merchants = 12;
    static constexpr std::size_t num_countries = 8;
    static constexpr double burst_factor = 2.0;

    explicit Generator(GeneratorConfig config) : config_(std::move(config)) {
        config_.validate();
        build_profiles();
        build_plan();
    }

    const GeneratorConfig& config() const noexcept { return config_; }
    Schema schema() const { return config_.schema(); }
    const FraudPlan& plan() const noexcept { return plan_; }
    bool done() const noexcept { return next_day_ >= config_.num_days; }

    /// Transactions of the next day, ordered by timestamp.
    std::vector<Transaction> next_day() {
        if (done()) return {};
        const auto day = static_cast<std::int64_t>(next_day_++);
        Rng rng(derive_seed(config_.seed, static_cast<std::uint64_t>(day) + 1));
        const bool drifted = config_.drift_day && day >= *config_.drift_day;
        const Timestamp base = config_.start_timestamp + day * seconds_per_day;

        struct Pending {
            Timestamp ts;
            std::size_t card;
            bool fraud;
        };
        std::vector<Pending> pending;
        for (std::size_t c = 0; c < cards_.size(); ++c) {
            const auto start = plan_.compromise_start[c];
            const bool compromised =
                start >= 0 && day >= start && day < start + static_cast<std::int64_t>(plan_.compromise_days);
            const auto n = rng.poisson(compromised ? plan_.compromised_rate : config_.trx_per_card_per_day);
            for (std::int64_t i = 0; i < n; ++i) {
                const auto offset = static_cast<Timestamp>(rng.below(seconds_per_day));
                const bool fraud = compromised && rng.bernoulli(plan_.fraud_probability);
                pending.push_back({base + offset, c, fraud});
            }
        }
        std::stable_sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) {
            return a.ts != b.ts ? a.ts < b.ts : a.card < b.card;
        });

        std::vector<Transaction> out;
        out.reserve(pending.size());
        for (const auto& p : pending) out.push_back(make_transaction(p.ts, p.card, p.fraud, drifted, rng));
        return out;
    }

    std::vector<Transaction> generate_all() {
        std::vector<Transaction> all;
        while (!done()) {
            auto day = next_day();
            all.insert(all.end(), std::make_move_iterator(day.begin()), std::make_move_iterator(day.end()));
        }
        return all;
    }

private:
    struct CardProfile {
        std::string id;
        double log_amount = 0.0;
        std::size_t favourites[3] = {0, 0, 0};
        std::size_t home_country = 0;
        double bias = 0.0;
    };

    void build_profiles() {
        Rng rng(derive_seed(config_.seed, 0));
        cards_.resize(config_.num_cards);
        for (std::size_t c = 0; c < cards_.size(); ++c) {
            auto& p = cards_[c];
            char buf[32];
            std::snprintf(buf, sizeof(buf), "c%06zu", c);
            p.id = buf;
            p.log_amount = rng.normal(3.5, 0.5);
            std::size_t merchants[num_merchants];
            for (std::size_t m = 0; m < num_merchants; ++m) merchants[m] = m;
            const auto fav = rng.sample_without_replacement<std::size_t>(merchants, 3);
            std::copy(fav.begin(), fav.end(), p.favourites);
            p.home_country = rng.bernoulli(0.7) ? 0 : 1 + rng.below(num_countries - 1);
            p.bias = rng.normal(0.0, 0.5);
        }
    }

    void build_plan() {
        Rng rng(derive_seed(config_.seed, 0xF4A0D));
        const double lambda = config_.trx_per_card_per_day;
        const double days = double(config_.num_days);
        const double target_frauds = config_.fraud_trx_rate * lambda * double(config_.num_cards) * days;

        plan_.compromised_rate = lambda * burst_factor;
        const auto max_days = std::min<std::size_t>(config_.max_fraud_days, config_.num_days);
        const double per_card_cap = 0.9 * plan_.compromised_rate * double(max_days);
        auto wanted = static_cast<std::size_t>(std::llround(config_.fraud_card_rate * double(config_.num_cards)));
        // The transaction-level rate takes priority: when too few cards are
        // requested to carry it, more cards are compromised.
        wanted = std::max(wanted, static_cast<std::size_t>(std::ceil(target_frauds / per_card_cap)));
        plan_.fraud_cards = std::clamp<std::size_t>(wanted, 1, config_.num_cards);

        const double per_card = target_frauds / double(plan_.fraud_cards);
        plan_.compromise_days = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::ceil(per_card / (0.9 * plan_.compromised_rate))), 1, max_days);
        plan_.fraud_probability =
            std::min(1.0, per_card / (plan_.compromised_rate * double(plan_.compromise_days)));

        // Compromise starts are stratified over the horizon so every day sees
        // a similar number of newly compromised cards.
        std::vector<std::size_t> ids(config_.num_cards);
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
        const auto chosen = rng.sample_without_replacement<std::size_t>(ids, plan_.fraud_cards);
        plan_.compromise_start.assign(config_.num_cards, -1);
        const double span = double(config_.num_days - plan_.compromise_days + 1);
        for (std::size_t j = 0; j < chosen.size(); ++j) {
            const double pos = (double(j) + rng.uniform()) * span / double(chosen.size());
            plan_.compromise_start[chosen[j]] = std::min<std::int64_t>(static_cast<std::int64_t>(pos),
                                                                       static_cast<std::int64_t>(span) - 1);
        }
    }

    Transaction make_transaction(Timestamp ts, std::size_t card, bool fraud, bool drifted, Rng& rng) {
        const auto& p = cards_[card];
        const double s = config_.fraud_signal;
        Transaction t;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "t%09llu", static_cast<unsigned long long>(next_id_++));
        t.trx_id = buf;
        t.card_id = p.id;
        t.timestamp = ts;

        const double shift = fraud ? (drifted ? 0.5 : 1.0) * s : 0.0;
        t.amount = std::round(std::exp(p.log_amount + shift + rng.normal(0.0, 0.5)) * 100.0) / 100.0;

        for (std::size_t i = 0; i < config_.num_categorical; ++i) {
            std::string value;
            switch (i) {
                case 0: value = merchant_name(pick_merchant(p, fraud, drifted, rng)); break;
                case 1: value = "k" + std::to_string(pick_country(p, fraud, rng)); break;
                case 2: value = pick_channel(fraud, rng); break;
                default: value = "v" + std::to_string(rng.below(5)); break;
            }
            if (rng.bernoulli(config_.missing_rate)) t.categorical.emplace_back();
            else t.categorical.emplace_back(std::move(value));
        }
        for (std::size_t j = 0; j < config_.num_numeric; ++j) {
            double v = 0.0;
            switch (j) {
                case 0: v = rng.normal(fraud ? 0.8 * s : 0.0, 1.0); break;
                case 1: v = rng.normal(p.bias, 1.0); break;
                default: v = rng.normal(0.0, 1.0); break;
            }
            v = std::round(v * 1e4) / 1e4;
            if (rng.bernoulli(config_.missing_rate)) t.numeric.emplace_back();
            else t.numeric.emplace_back(v);
        }
        t.true_label = fraud ? Label::fraud : Label::genuine;
        return t;
    }

    static std::string merchant_name(std::size_t m) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "m%02zu", m);
        return buf;
    }

    std::size_t pick_merchant(const CardProfile& p, bool fraud, bool drifted, Rng& rng) const {
        if (fraud) {
            const double risky = std::min(0.9, 0.45 * config_.fraud_signal);
            if (rng.bernoulli(risky)) return drifted ? 3 : 7;
            return rng.below(num_merchants);
        }
        if (rng.bernoulli(0.85)) return p.favourites[rng.below(3)];
        return rng.below(num_merchants);
    }

    std::size_t pick_country(const CardProfile& p, bool fraud, Rng& rng) const {
        const double home = fraud ? std::max(0.05, 0.93 - 0.4 * config_.fraud_signal) : 0.93;
        if (rng.bernoulli(home)) return p.home_country;
        return rng.below(num_countries);
    }

    std::string pick_channel(bool fraud, Rng& rng) const {
        const double u = rng.uniform();
        const double ecom = fraud ? std::min(0.9, 0.3 + 0.35 * config_.fraud_signal) : 0.3;
        if (u < ecom) return "ecom";
        if (u < ecom + 0.1) return "atm";
        return "pos";
    }

    GeneratorConfig config_;
    std::vector<CardProfile> cards_;
    FraudPlan plan_;
    std::size_t next_day_ = 0;
    std::uint64_t next_id_ = 0;
};

inline std::vector<Transaction> generate(const GeneratorConfig& config) {
    Generator g(config);
    return g.generate_all();
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

/// Emits the rows of a transaction file in file order, `rate` rows per
/// simulated second; `speedup` divides the wall-clock pacing.
class Replayer {
public:
    Replayer(TransactionFile file, double rate, double speedup) : file_(std::move(file)), rate_(rate), speedup_(speedup) {
        if (!(rate > 0.0)) throw Error(ErrorCode::invalid_argument, "replay rate must be positive");
        if (!(speedup > 0.0)) throw Error(ErrorCode::invalid_argument, "replay speedup must be positive");
    }

    const Schema& schema() const noexcept { return file_.schema; }
    std::size_t size() const noexcept { return file_.transactions.size(); }
    const std::vector<Transaction>& transactions() const noexcept { return file_.transactions; }

    /// Simulated seconds after replay start at which row i is emitted.
    double emit_offset(std::size_t i) const noexcept { return double(i) / rate_; }
    double wall_offset(std::size_t i) const noexcept { return emit_offset(i) / speedup_; }

    /// Calls sink(transaction, emit_offset) for each row, sleeping between rows
    /// to keep the configured pace. Returns the wall-clock span in seconds.
    template <typename Sink>
    double run(Sink&& sink) const {
        using clock = std::chrono::steady_clock;
        const auto start = clock::now();
        for (std::size_t i = 0; i < file_.transactions.size(); ++i) {
            const auto due = start + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(wall_offset(i)));
            std::this_thread::sleep_until(due);
            sink(file_.transactions[i], emit_offset(i));
        }
        return std::chrono::duration<double>(clock::now() - start).count();
    }

private:
    TransactionFile file_;
    double rate_;
    double speedup_;
};

inline Replayer replay(const std::string& path, double rate, double speedup) {
    return Replayer(read_transactions(path), rate, speedup);
}

} // namespace fraudstream
