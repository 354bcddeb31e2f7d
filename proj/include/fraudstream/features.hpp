#pragma once

// Per-card windowed aggregates over stored history.
//
// For every window w the engineered vector holds, over history rows in
// [t - w, t):
//   count, sum, avg, max, min of amount   (rows with a missing amount skipped)
//   seconds since the latest row          (w when the window is empty)
//   distinct values of the aggregated categorical attribute
// followed by three whole-history extras taken from the card profile:
//   card age in seconds, lifetime transaction count, lifetime average amount.

#include <algorithm>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fraudstream/error.hpp"
#include "fraudstream/preprocess.hpp"
#include "fraudstream/store.hpp"
#include "fraudstream/transaction.hpp"

namespace fraudstream {

struct AggregationSpec {
    static constexpr std::size_t stats_per_window = 7;
    static constexpr std::size_t profile_extras = 3;

    std::vector<Duration> windows{seconds_per_day, 7 * seconds_per_day};
    std::size_t category_attribute = 0;

    void validate() const {
        if (windows.empty()) throw Error(ErrorCode::config_error, "aggregation needs at least one window");
        for (std::size_t i = 0; i < windows.size(); ++i) {
            if (windows[i] <= 0) throw Error(ErrorCode::config_error, "aggregation windows must be positive");
            if (i > 0 && windows[i] <= windows[i - 1]) {
                throw Error(ErrorCode::config_error, "aggregation windows must be strictly increasing");
            }
        }
    }

    std::size_t engineered_size() const noexcept { return windows.size() * stats_per_window + profile_extras; }
    Duration max_window() const noexcept { return windows.empty() ? 0 : windows.back(); }

    bool operator==(const AggregationSpec&) const = default;
};

/// Engineered vector of `trx` from its card history. `history` must hold only
/// rows of trx.card_id older than trx; rows outside a window are ignored.
inline std::vector<double> aggregate(const Transaction& trx, const std::vector<StoredRow>& history,
                                     const AggregationSpec& spec, const std::optional<CardProfile>& profile) {
    for (const auto& row : history) {
        if (row.card_id != trx.card_id) {
            throw Error(ErrorCode::invalid_argument,
                        "history of card " + trx.card_id + " contains a row of card " + row.card_id);
        }
    }
    std::vector<double> out;
    out.reserve(spec.engineered_size());
    std::set<std::string> categories;
    for (const Duration w : spec.windows) {
        const Timestamp start = trx.timestamp - w;
        std::uint64_t count = 0;
        double sum = 0.0;
        double max = -std::numeric_limits<double>::infinity();
        double min = std::numeric_limits<double>::infinity();
        std::optional<Timestamp> latest;
        categories.clear();
        for (const auto& row : history) {
            if (row.timestamp < start || row.timestamp >= trx.timestamp) continue;
            const auto& base = row.augmented->base;
            if (!latest || row.timestamp > *latest) latest = row.timestamp;
            if (spec.category_attribute < base.categorical.size() && base.categorical[spec.category_attribute]) {
                categories.insert(*base.categorical[spec.category_attribute]);
            }
            if (!base.amount) continue;
            ++count;
            sum += *base.amount;
            max = std::max(max, *base.amount);
            min = std::min(min, *base.amount);
        }
        out.push_back(double(count));
        out.push_back(sum);
        out.push_back(count ? sum / double(count) : 0.0);
        out.push_back(count ? max : 0.0);
        out.push_back(count ? min : 0.0);
        out.push_back(latest ? double(trx.timestamp - *latest) : double(w));
        out.push_back(double(categories.size()));
    }
    if (profile && profile->count > 0) {
        out.push_back(double(std::max<Timestamp>(0, trx.timestamp - profile->first_seen)));
        out.push_back(double(profile->count));
        out.push_back(profile->amount_count ? profile->amount_sum / double(profile->amount_count) : 0.0);
    } else {
        out.insert(out.end(), {0.0, 0.0, 0.0});
    }
    return out;
}

/// Reads the card history from the store (one query over the widest window)
/// and builds the augmented transaction. The encoded part is left empty when
/// no preprocessing has been fitted yet.
inline AugmentedTransaction augment(const Transaction& trx, const TransactionStore& store,
                                    const Preprocessor* preprocessing, const AggregationSpec& spec) {
    const auto history = store.query_card_window(trx.card_id, trx.timestamp, spec.max_window());
    AugmentedTransaction aug;
    aug.base = trx;
    aug.engineered = aggregate(trx, history, spec, store.profile(trx.card_id));
    if (preprocessing) aug.encoded_raw = encode(trx, preprocessing->dictionary, preprocessing->medians);
    return aug;
}

} // namespace fraudstream
