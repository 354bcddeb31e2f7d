#pragma once

// In-process partitioned message log. Records are addressed by
// (partition, offset); offsets are consecutive per partition starting at 0 and
// are never reused, even after retention removes the records that held them.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "fraudstream/error.hpp"
#include "fraudstream/transaction.hpp"

namespace fraudstream {

/// 64-bit FNV-1a. Fixed so partition assignment replays identically on every
/// platform: offset basis 0xcbf29ce484222325, prime 0x100000001b3.
constexpr std::uint64_t stable_hash(std::string_view key) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : key) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct Record {
    std::string key;
    std::string payload;
    Timestamp produce_timestamp = 0;
    std::uint64_t offset = 0;

    bool operator==(const Record&) const = default;
};

struct RecordPosition {
    std::size_t partition = 0;
    std::uint64_t offset = 0;

    bool operator==(const RecordPosition&) const = default;
};

class TopicLog {
public:
    TopicLog(std::string name, std::size_t num_partitions, Duration retention_window)
        : name_(std::move(name)), retention_window_(retention_window), partitions_(num_partitions) {
        if (num_partitions == 0) {
            throw Error(ErrorCode::invalid_argument, "topic '" + name_ + "' needs at least one partition");
        }
        if (retention_window <= 0) {
            throw Error(ErrorCode::invalid_argument, "retention window must be positive");
        }
    }

    TopicLog(const TopicLog&) = delete;
    TopicLog& operator=(const TopicLog&) = delete;

    const std::string& name() const noexcept { return name_; }
    std::size_t num_partitions() const noexcept { return partitions_.size(); }
    Duration retention_window() const noexcept { return retention_window_; }

    std::size_t partition_for(std::string_view key) const noexcept {
        return static_cast<std::size_t>(stable_hash(key) % partitions_.size());
    }

    RecordPosition produce(std::string key, std::string payload, Timestamp ts) {
        const auto p = partition_for(key);
        std::unique_lock lock(mutex_);
        auto& part = partitions_[p];
        const auto offset = part.next_offset++;
        part.records.push_back(Record{std::move(key), std::move(payload), ts, offset});
        return {p, offset};
    }

    /// Up to `max_records` surviving records with offset >= from_offset.
    std::vector<Record> poll(std::size_t partition, std::uint64_t from_offset, std::size_t max_records) const {
        std::shared_lock lock(mutex_);
        const auto& part = checked(partition);
        auto it = std::lower_bound(part.records.begin(), part.records.end(), from_offset,
                                   [](const Record& r, std::uint64_t off) { return r.offset < off; });
        std::vector<Record> out;
        for (; it != part.records.end() && out.size() < max_records; ++it) out.push_back(*it);
        return out;
    }

    /// Removes every record whose produce timestamp is older than
    /// now - retention_window. Survivors keep their offsets.
    std::size_t retention_sweep(Timestamp now) {
        const Timestamp cutoff = now - retention_window_;
        std::unique_lock lock(mutex_);
        std::size_t expired = 0;
        for (auto& part : partitions_) {
            expired += std::erase_if(part.records, [cutoff](const Record& r) { return r.produce_timestamp < cutoff; });
        }
        return expired;
    }

    std::uint64_t next_offset(std::size_t partition) const {
        std::shared_lock lock(mutex_);
        return checked(partition).next_offset;
    }

    std::size_t partition_size(std::size_t partition) const {
        std::shared_lock lock(mutex_);
        return checked(partition).records.size();
    }

    std::size_t record_count() const {
        std::shared_lock lock(mutex_);
        std::size_t n = 0;
        for (const auto& part : partitions_) n += part.records.size();
        return n;
    }

private:
    struct Partition {
        std::deque<Record> records;
        std::uint64_t next_offset = 0;
    };

    const Partition& checked(std::size_t partition) const {
        if (partition >= partitions_.size()) {
            throw Error(ErrorCode::invalid_partition, "partition " + std::to_string(partition) + " out of range for topic '" +
                                                          name_ + "' with " + std::to_string(partitions_.size()) +
                                                          " partitions");
        }
        return partitions_[partition];
    }

    std::string name_;
    Duration retention_window_;
    std::vector<Partition> partitions_;
    mutable std::shared_mutex mutex_;
};

class Broker {
public:
    TopicLog& create_topic(const std::string& name, std::size_t num_partitions, Duration retention_window) {
        std::lock_guard lock(mutex_);
        if (topics_.contains(name)) throw Error(ErrorCode::duplicate_topic, "topic '" + name + "' already exists");
        auto log = std::make_unique<TopicLog>(name, num_partitions, retention_window);
        auto& ref = *log;
        topics_.emplace(name, std::move(log));
        return ref;
    }

    TopicLog& topic(const std::string& name) const {
        std::lock_guard lock(mutex_);
        const auto it = topics_.find(name);
        if (it == topics_.end()) throw Error(ErrorCode::unknown_topic, "no topic named '" + name + "'");
        return *it->second;
    }

    bool has_topic(const std::string& name) const {
        std::lock_guard lock(mutex_);
        return topics_.contains(name);
    }

    RecordPosition produce(const std::string& topic_name, std::string key, std::string payload, Timestamp ts) {
        return topic(topic_name).produce(std::move(key), std::move(payload), ts);
    }

    std::vector<Record> poll(const std::string& topic_name, std::size_t partition, std::uint64_t from_offset,
                             std::size_t max_records) const {
        return topic(topic_name).poll(partition, from_offset, max_records);
    }

    std::size_t retention_sweep(const std::string& topic_name, Timestamp now) {
        return topic(topic_name).retention_sweep(now);
    }

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::unique_ptr<TopicLog>> topics_;
};

} // namespace fraudstream
