#pragma once

// Hour-partitioned transaction table. The partition key is the hour bucket
// (timestamp div 3600); inside a partition rows are clustered by
// (card_id, timestamp, trx_id), so a card's history over a window is a
// sequence of range scans over the buckets the window intersects.

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "fraudstream/error.hpp"
#include "fraudstream/transaction.hpp"

namespace fraudstream {

struct AugmentedTransaction {
    Transaction base;
    std::vector<double> encoded_raw; // empty until preprocessing has been fitted
    std::vector<double> engineered;

    std::vector<double> features() const {
        std::vector<double> x(encoded_raw);
        x.insert(x.end(), engineered.begin(), engineered.end());
        return x;
    }

    bool operator==(const AugmentedTransaction&) const = default;
};

struct StoredRow {
    std::int64_t hour_bucket = 0;
    std::string card_id;
    Timestamp timestamp = 0;
    std::shared_ptr<const AugmentedTransaction> augmented;

    static StoredRow from(AugmentedTransaction aug) {
        StoredRow row;
        row.hour_bucket = hour_of(aug.base.timestamp);
        row.card_id = aug.base.card_id;
        row.timestamp = aug.base.timestamp;
        row.augmented = std::make_shared<const AugmentedTransaction>(std::move(aug));
        return row;
    }

    const std::string& trx_id() const { return augmented->base.trx_id; }
};

/// Whole-history statistics of a card, maintained on insert and kept across
/// pruning.
struct CardProfile {
    Timestamp first_seen = 0;
    std::uint64_t count = 0;
    std::uint64_t amount_count = 0;
    double amount_sum = 0.0;

    bool operator==(const CardProfile&) const = default;
};

class TransactionStore {
public:
    void insert(StoredRow row) {
        if (!row.augmented) throw Error(ErrorCode::invalid_argument, "stored row without a transaction");
        const auto& base = row.augmented->base;
        if (row.hour_bucket != hour_of(row.timestamp)) {
            throw Error(ErrorCode::invalid_argument, "hour bucket " + std::to_string(row.hour_bucket) +
                                                         " inconsistent with timestamp " + std::to_string(row.timestamp));
        }
        if (row.card_id != base.card_id || row.timestamp != base.timestamp) {
            throw Error(ErrorCode::invalid_argument, "row key does not match transaction " + base.trx_id);
        }
        std::unique_lock lock(mutex_);
        auto& bucket = buckets_[row.hour_bucket];
        ClusterKey key{row.card_id, row.timestamp, base.trx_id};
        auto it = bucket.find(key);
        auto& profile = profiles_[row.card_id];
        if (it != bucket.end()) {
            unprofile(profile, it->second);
            it->second = std::move(row);
            profile_add(profile, it->second);
            return;
        }
        profile_add(profile, row);
        bucket.emplace(std::move(key), std::move(row));
        ++size_;
    }

    /// Rows of `card_id` with timestamp in [end_time - window, end_time),
    /// ascending by timestamp.
    std::vector<StoredRow> query_card_window(const std::string& card_id, Timestamp end_time, Duration window) const {
        if (window <= 0) throw Error(ErrorCode::invalid_argument, "query window must be positive");
        std::vector<StoredRow> out;
        const Timestamp start = end_time - window;
        std::shared_lock lock(mutex_);
        std::size_t visited = 0;
        const auto first = hour_of(start);
        const auto last = hour_of(end_time - 1);
        for (auto b = buckets_.lower_bound(first); b != buckets_.end() && b->first <= last; ++b) {
            ++visited;
            const auto& bucket = b->second;
            for (auto it = bucket.lower_bound(ClusterKey{card_id, start, {}});
                 it != bucket.end() && std::get<0>(it->first) == card_id && std::get<1>(it->first) < end_time; ++it) {
                out.push_back(it->second);
            }
        }
        last_buckets_visited_ = visited;
        return out;
    }

    /// Every row with timestamp in [start, end), ordered by (hour, card, timestamp).
    std::vector<StoredRow> scan_range(Timestamp start, Timestamp end) const {
        std::vector<StoredRow> out;
        if (end <= start) return out;
        std::shared_lock lock(mutex_);
        for (auto b = buckets_.lower_bound(hour_of(start)); b != buckets_.end() && b->first <= hour_of(end - 1); ++b) {
            for (const auto& [key, row] : b->second) {
                if (row.timestamp >= start && row.timestamp < end) out.push_back(row);
            }
        }
        return out;
    }

    std::size_t prune(Timestamp before) {
        std::unique_lock lock(mutex_);
        std::size_t removed = 0;
        const auto boundary = hour_of(before);
        for (auto b = buckets_.begin(); b != buckets_.end() && b->first <= boundary;) {
            if (b->first < boundary) {
                removed += b->second.size();
                b = buckets_.erase(b);
                continue;
            }
            removed += std::erase_if(b->second, [before](const auto& kv) { return kv.second.timestamp < before; });
            b = b->second.empty() ? buckets_.erase(b) : std::next(b);
        }
        size_ -= removed;
        return removed;
    }

    std::optional<CardProfile> profile(const std::string& card_id) const {
        std::shared_lock lock(mutex_);
        const auto it = profiles_.find(card_id);
        if (it == profiles_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return size_;
    }

    std::size_t bucket_count() const {
        std::shared_lock lock(mutex_);
        return buckets_.size();
    }

    /// Hour buckets touched by the most recent query_card_window call.
    std::size_t last_buckets_visited() const noexcept { return last_buckets_visited_.load(); }

    // -----------------------------------------------------------------------
    // Snapshot: one JSON object per line with fields, in order,
    // hour_bucket, card_id, timestamp, trx_id, transaction, encoded_raw,
    // engineered.
    // -----------------------------------------------------------------------

    void save_snapshot(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw Error(ErrorCode::io_error, "cannot write snapshot '" + path + "'");
        std::shared_lock lock(mutex_);
        for (const auto& [hour, bucket] : buckets_) {
            for (const auto& [key, row] : bucket) {
                nlohmann::ordered_json j;
                j["hour_bucket"] = row.hour_bucket;
                j["card_id"] = row.card_id;
                j["timestamp"] = row.timestamp;
                j["trx_id"] = row.trx_id();
                j["transaction"] = to_json(row.augmented->base);
                j["encoded_raw"] = row.augmented->encoded_raw;
                j["engineered"] = row.augmented->engineered;
                out << j.dump() << '\n';
            }
        }
    }

    static TransactionStore load_snapshot(const std::string& path, const Schema& schema) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::io_error, "cannot open snapshot '" + path + "'");
        TransactionStore store;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                AugmentedTransaction aug;
                aug.base = transaction_from_json(j.at("transaction"), schema, line_no);
                aug.encoded_raw = j.at("encoded_raw").get<std::vector<double>>();
                aug.engineered = j.at("engineered").get<std::vector<double>>();
                StoredRow row = StoredRow::from(std::move(aug));
                if (row.hour_bucket != j.at("hour_bucket").get<std::int64_t>()) {
                    throw Error(ErrorCode::data_error, "line " + std::to_string(line_no) + ": inconsistent hour bucket");
                }
                store.insert(std::move(row));
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorCode::data_error, "line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        return store;
    }

    TransactionStore() = default;
    TransactionStore(TransactionStore&& o) noexcept
        : buckets_(std::move(o.buckets_)), profiles_(std::move(o.profiles_)), size_(o.size_),
          last_buckets_visited_(o.last_buckets_visited_.load()) {}

private:
    using ClusterKey = std::tuple<std::string, Timestamp, std::string>;
    using Partition = std::map<ClusterKey, StoredRow>;

    static void profile_add(CardProfile& p, const StoredRow& row) {
        const auto& base = row.augmented->base;
        if (p.count == 0 || base.timestamp < p.first_seen) p.first_seen = base.timestamp;
        ++p.count;
        if (base.amount) {
            ++p.amount_count;
            p.amount_sum += *base.amount;
        }
    }

    static void unprofile(CardProfile& p, const StoredRow& row) {
        const auto& base = row.augmented->base;
        --p.count;
        if (base.amount) {
            --p.amount_count;
            p.amount_sum -= *base.amount;
        }
    }

    std::map<std::int64_t, Partition> buckets_;
    std::unordered_map<std::string, CardProfile> profiles_;
    std::size_t size_ = 0;
    mutable std::atomic<std::size_t> last_buckets_visited_{0};
    mutable std::shared_mutex mutex_;
};

} // namespace fraudstream
