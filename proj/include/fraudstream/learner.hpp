#pragma once

// CART trees, balanced random forests built partition by partition, and the
// feedback/delayed ensemble that scores incoming transactions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <future>
#include <numeric>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "fraudstream/error.hpp"
#include "fraudstream/random.hpp"
#include "fraudstream/transaction.hpp"

namespace fraudstream {

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

/// Row-major feature matrix with one label per row.
class Dataset {
public:
    explicit Dataset(std::size_t num_features) : num_features_(num_features) {}

    void add(std::span<const double> x, Label y) {
        if (x.size() != num_features_) {
            throw Error(ErrorCode::schema_mismatch, "row has " + std::to_string(x.size()) + " features, dataset expects " +
                                                        std::to_string(num_features_));
        }
        values_.insert(values_.end(), x.begin(), x.end());
        labels_.push_back(y);
    }

    std::size_t size() const noexcept { return labels_.size(); }
    std::size_t num_features() const noexcept { return num_features_; }
    std::span<const double> row(std::size_t i) const { return {values_.data() + i * num_features_, num_features_}; }
    double value(std::size_t i, std::size_t f) const { return values_[i * num_features_ + f]; }
    Label label(std::size_t i) const { return labels_[i]; }

    /// Row indices split by class.
    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_label() const {
        std::vector<std::size_t> frauds, genuine;
        for (std::size_t i = 0; i < labels_.size(); ++i) (is_fraud(labels_[i]) ? frauds : genuine).push_back(i);
        return {std::move(frauds), std::move(genuine)};
    }

private:
    std::size_t num_features_;
    std::vector<double> values_;
    std::vector<Label> labels_;
};

// ---------------------------------------------------------------------------
// Decision tree
// ---------------------------------------------------------------------------

struct TreeParams {
    std::size_t max_depth = 20;
    std::size_t min_samples_leaf = 5;
    std::size_t features_per_split = 0; // 0 = floor(sqrt(num_features))
    std::uint64_t seed = 0;

    std::size_t resolved_features(std::size_t num_features) const {
        if (features_per_split == 0) {
            return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(double(num_features)))));
        }
        if (features_per_split > num_features) {
            throw Error(ErrorCode::invalid_argument, "features_per_split " + std::to_string(features_per_split) +
                                                         " exceeds " + std::to_string(num_features) + " features");
        }
        return features_per_split;
    }

    void validate() const {
        if (max_depth == 0) throw Error(ErrorCode::config_error, "max_depth must be positive");
        if (min_samples_leaf == 0) throw Error(ErrorCode::config_error, "min_samples_leaf must be positive");
    }
};

struct TreeNode {
    std::int32_t feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    double probability = 0.0; // fraud fraction of the training rows reaching the node
    std::uint32_t samples = 0;

    bool is_leaf() const noexcept { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

class DecisionTree {
public:
    DecisionTree() = default;
    DecisionTree(std::vector<TreeNode> nodes, std::size_t num_features)
        : nodes_(std::move(nodes)), num_features_(num_features) {}

    double predict(std::span<const double> x) const {
        std::int32_t i = 0;
        while (!nodes_[i].is_leaf()) i = x[nodes_[i].feature] <= nodes_[i].threshold ? nodes_[i].left : nodes_[i].right;
        return nodes_[i].probability;
    }

    const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
    std::size_t num_features() const noexcept { return num_features_; }

    std::size_t depth() const { return nodes_.empty() ? 0 : depth_from(0); }

    std::size_t leaf_count() const {
        return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
        for (const auto& n : nodes_) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.probability, n.samples});
        return {{"num_features", num_features_}, {"nodes", std::move(nodes)}};
    }

    static DecisionTree from_json(const nlohmann::json& j) {
        std::vector<TreeNode> nodes;
        for (const auto& n : j.at("nodes")) {
            nodes.push_back({n[0].get<std::int32_t>(), n[1].get<double>(), n[2].get<std::int32_t>(),
                             n[3].get<std::int32_t>(), n[4].get<double>(), n[5].get<std::uint32_t>()});
        }
        return DecisionTree(std::move(nodes), j.at("num_features").get<std::size_t>());
    }

    bool operator==(const DecisionTree&) const = default;

private:
    std::size_t depth_from(std::int32_t i) const {
        const auto& n = nodes_[i];
        if (n.is_leaf()) return 0;
        return 1 + std::max(depth_from(n.left), depth_from(n.right));
    }

    std::vector<TreeNode> nodes_;
    std::size_t num_features_ = 0;
};

namespace detail {

// Depth-first greedy growth. Each node draws its candidate features from the
// tree's own generator, so node order fixes the random sequence.
class TreeBuilder {
public:
    TreeBuilder(const Dataset& data, const TreeParams& params)
        : data_(data), params_(params), mtry_(params.resolved_features(data.num_features())), rng_(params.seed) {
        features_.resize(data.num_features());
        std::iota(features_.begin(), features_.end(), std::size_t{0});
    }

    DecisionTree build(std::vector<std::size_t> rows) {
        grow(std::move(rows), 0);
        return DecisionTree(std::move(nodes_), data_.num_features());
    }

private:
    struct Split {
        std::size_t feature = 0;
        double threshold = 0.0;
        double impurity = 0.0;
    };

    static double gini(double frauds, double n) {
        if (n <= 0.0) return 0.0;
        const double p = frauds / n;
        return 2.0 * p * (1.0 - p);
    }

    std::int32_t grow(std::vector<std::size_t> rows, std::size_t depth) {
        const auto index = static_cast<std::int32_t>(nodes_.size());
        nodes_.emplace_back();
        std::size_t frauds = 0;
        for (const auto r : rows) frauds += is_fraud(data_.label(r));
        const double n = double(rows.size());
        nodes_[index].probability = rows.empty() ? 0.0 : double(frauds) / n;
        nodes_[index].samples = static_cast<std::uint32_t>(rows.size());

        if (frauds == 0 || frauds == rows.size() || depth >= params_.max_depth ||
            rows.size() < 2 * params_.min_samples_leaf) {
            return index;
        }
        const auto split = best_split(rows, frauds);
        if (!split) return index;

        std::vector<std::size_t> left, right;
        for (const auto r : rows) (data_.value(r, split->feature) <= split->threshold ? left : right).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        nodes_[index].feature = static_cast<std::int32_t>(split->feature);
        nodes_[index].threshold = split->threshold;
        const auto l = grow(std::move(left), depth + 1);
        nodes_[index].left = l;
        const auto r = grow(std::move(right), depth + 1);
        nodes_[index].right = r;
        return index;
    }

    std::optional<Split> best_split(const std::vector<std::size_t>& rows, std::size_t frauds) {
        const auto candidates = rng_.sample_without_replacement<std::size_t>(features_, mtry_);
        const double n = double(rows.size());
        const double parent = gini(double(frauds), n);
        const std::size_t min_leaf = params_.min_samples_leaf;
        std::optional<Split> best;
        std::vector<std::pair<double, bool>> column(rows.size());
        for (const auto f : candidates) {
            for (std::size_t i = 0; i < rows.size(); ++i) column[i] = {data_.value(rows[i], f), is_fraud(data_.label(rows[i]))};
            std::sort(column.begin(), column.end());
            std::size_t left_frauds = 0;
            for (std::size_t i = 0; i + 1 < column.size(); ++i) {
                left_frauds += column[i].second;
                const std::size_t nl = i + 1;
                const std::size_t nr = column.size() - nl;
                if (column[i].first == column[i + 1].first || nl < min_leaf || nr < min_leaf) continue;
                const double impurity = (double(nl) * gini(double(left_frauds), double(nl)) +
                                         double(nr) * gini(double(frauds - left_frauds), double(nr))) /
                                        n;
                if (impurity < parent - 1e-12 && (!best || impurity < best->impurity)) {
                    double threshold = 0.5 * (column[i].first + column[i + 1].first);
                    if (!(threshold < column[i + 1].first)) threshold = column[i].first;
                    best = Split{f, threshold, impurity};
                }
            }
        }
        return best;
    }

    const Dataset& data_;
    const TreeParams& params_;
    std::size_t mtry_;
    Rng rng_;
    std::vector<std::size_t> features_;
    std::vector<TreeNode> nodes_;
};

} // namespace detail

inline DecisionTree train_tree(const Dataset& data, std::span<const std::size_t> rows, const TreeParams& params) {
    if (rows.empty()) throw Error(ErrorCode::invalid_argument, "cannot train a tree on zero rows");
    params.validate();
    detail::TreeBuilder builder(data, params);
    return builder.build(std::vector<std::size_t>(rows.begin(), rows.end()));
}

inline DecisionTree train_tree(const Dataset& data, const TreeParams& params) {
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return train_tree(data, rows, params);
}

// ---------------------------------------------------------------------------
// Balanced random forest
// ---------------------------------------------------------------------------

struct TreeComposition {
    std::size_t partition = 0;
    std::size_t frauds = 0;
    std::size_t genuine = 0;

    bool operator==(const TreeComposition&) const = default;
};

struct BalancedForest {
    std::vector<DecisionTree> trees;
    std::vector<TreeComposition> composition;
    std::size_t training_size = 0; // distinct rows used by any tree
    std::int64_t trained_on_day = 0;
    std::size_t num_features = 0;

    /// Unweighted mean of the trees' leaf probabilities.
    double predict(std::span<const double> x) const {
        if (x.size() != num_features) {
            throw Error(ErrorCode::schema_mismatch, "feature vector has " + std::to_string(x.size()) +
                                                        " entries, forest expects " + std::to_string(num_features));
        }
        if (trees.empty()) throw Error(ErrorCode::invalid_argument, "forest has no trees");
        double sum = 0.0;
        for (const auto& t : trees) sum += t.predict(x);
        return sum / double(trees.size());
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["trained_on_day"] = trained_on_day;
        j["training_size"] = training_size;
        j["num_features"] = num_features;
        auto& comp = j["composition"] = nlohmann::ordered_json::array();
        for (const auto& c : composition) comp.push_back({c.partition, c.frauds, c.genuine});
        auto& ts = j["trees"] = nlohmann::ordered_json::array();
        for (const auto& t : trees) ts.push_back(t.to_json());
        return j;
    }

    static BalancedForest from_json(const nlohmann::json& j) {
        BalancedForest f;
        f.trained_on_day = j.at("trained_on_day").get<std::int64_t>();
        f.training_size = j.at("training_size").get<std::size_t>();
        f.num_features = j.at("num_features").get<std::size_t>();
        for (const auto& c : j.at("composition")) {
            f.composition.push_back({c[0].get<std::size_t>(), c[1].get<std::size_t>(), c[2].get<std::size_t>()});
        }
        for (const auto& t : j.at("trees")) f.trees.push_back(DecisionTree::from_json(t));
        return f;
    }

    bool operator==(const BalancedForest&) const = default;
};

struct ForestParams {
    std::size_t trees_per_partition = 25;
    // Genuine rows per tree as a multiple of the fraud count, capped at the
    // partition size.
    double genuine_ratio = 1.0;
    TreeParams tree;
};

/// Random stream used by partition p of a forest trained with `seed`.
/// Every tree of the partition draws its genuine subsample (partial
/// Fisher-Yates through Rng::sample_without_replacement) and then its own
/// tree seed (Rng::next) from this stream, in tree order.
inline std::uint64_t partition_seed(std::uint64_t seed, std::size_t partition) {
    return derive_seed(seed, static_cast<std::uint64_t>(partition));
}

inline std::size_t genuine_per_tree(std::size_t frauds, double ratio, std::size_t partition_size) {
    const auto wanted = static_cast<std::size_t>(std::ceil(ratio * double(frauds)));
    return std::min(wanted, partition_size);
}

/// All frauds are shared by every partition; each partition of genuine rows
/// contributes trees_per_partition trees. Partitions may train concurrently;
/// the result does not depend on `threads`.
inline BalancedForest train_balanced_forest(const Dataset& data, std::span<const std::size_t> frauds,
                                            std::span<const std::vector<std::size_t>> genuine_partitions,
                                            const ForestParams& params, std::uint64_t seed, std::int64_t day,
                                            std::size_t threads = 1) {
    if (frauds.empty()) throw Error(ErrorCode::fraud_starvation, "no fraudulent rows to balance against");
    const bool any_genuine = std::any_of(genuine_partitions.begin(), genuine_partitions.end(),
                                         [](const auto& p) { return !p.empty(); });
    if (!any_genuine) throw Error(ErrorCode::invalid_argument, "no genuine rows to subsample");
    if (params.trees_per_partition == 0) throw Error(ErrorCode::invalid_argument, "trees_per_partition must be positive");

    struct PartitionResult {
        std::vector<DecisionTree> trees;
        std::vector<TreeComposition> composition;
        std::vector<std::size_t> used;
    };
    const auto train_partition = [&](std::size_t p) {
        PartitionResult out;
        const auto& pool = genuine_partitions[p];
        if (pool.empty()) return out;
        Rng rng(partition_seed(seed, p));
        const auto m = genuine_per_tree(frauds.size(), params.genuine_ratio, pool.size());
        for (std::size_t t = 0; t < params.trees_per_partition; ++t) {
            auto rows = rng.sample_without_replacement<std::size_t>(pool, m);
            out.used.insert(out.used.end(), rows.begin(), rows.end());
            TreeParams tp = params.tree;
            tp.seed = rng.next();
            rows.insert(rows.begin(), frauds.begin(), frauds.end());
            out.trees.push_back(train_tree(data, rows, tp));
            out.composition.push_back({p, frauds.size(), m});
        }
        return out;
    };

    std::vector<PartitionResult> results(genuine_partitions.size());
    if (threads <= 1 || genuine_partitions.size() <= 1) {
        for (std::size_t p = 0; p < genuine_partitions.size(); ++p) results[p] = train_partition(p);
    } else {
        for (std::size_t begin = 0; begin < genuine_partitions.size(); begin += threads) {
            const auto end = std::min(genuine_partitions.size(), begin + threads);
            std::vector<std::future<PartitionResult>> futures;
            for (std::size_t p = begin; p < end; ++p) futures.push_back(std::async(std::launch::async, train_partition, p));
            for (std::size_t p = begin; p < end; ++p) results[p] = futures[p - begin].get();
        }
    }

    BalancedForest forest;
    forest.trained_on_day = day;
    forest.num_features = data.num_features();
    std::unordered_set<std::size_t> distinct(frauds.begin(), frauds.end());
    for (auto& r : results) {
        for (auto& t : r.trees) forest.trees.push_back(std::move(t));
        forest.composition.insert(forest.composition.end(), r.composition.begin(), r.composition.end());
        distinct.insert(r.used.begin(), r.used.end());
    }
    forest.training_size = distinct.size();
    return forest;
}

/// Plain random forest: every tree on a bootstrap sample of all rows.
inline BalancedForest train_random_forest(const Dataset& data, std::span<const std::size_t> rows, std::size_t num_trees,
                                          const TreeParams& tree_params, std::uint64_t seed, std::int64_t day) {
    if (rows.empty()) throw Error(ErrorCode::invalid_argument, "cannot train a forest on zero rows");
    Rng rng(seed);
    BalancedForest forest;
    forest.trained_on_day = day;
    forest.num_features = data.num_features();
    forest.training_size = rows.size();
    for (std::size_t t = 0; t < num_trees; ++t) {
        std::vector<std::size_t> sample(rows.size());
        std::size_t frauds = 0;
        for (auto& s : sample) {
            s = rows[rng.below(rows.size())];
            frauds += is_fraud(data.label(s));
        }
        TreeParams tp = tree_params;
        tp.seed = rng.next();
        forest.trees.push_back(train_tree(data, sample, tp));
        forest.composition.push_back({0, frauds, sample.size() - frauds});
    }
    return forest;
}

// ---------------------------------------------------------------------------
// Feedback / delayed ensemble
// ---------------------------------------------------------------------------

struct EnsembleConfig {
    std::size_t feedback_window_days = 14; // f
    std::size_t delayed_window_days = 13;  // k
    std::size_t label_delay_days = 7;      // d
    std::size_t trees_per_partition = 25;
    std::size_t num_partitions = 4;
    double w_a = 0.5;
    double genuine_ratio = 1.0;
    bool balanced_feedback = true;

    void validate() const {
        const auto fail = [](const std::string& m) { throw Error(ErrorCode::config_error, "ensemble: " + m); };
        if (feedback_window_days == 0) fail("feedback_window_days must be at least 1");
        if (delayed_window_days == 0) fail("delayed_window_days must be at least 1");
        if (label_delay_days == 0) fail("label_delay_days must be at least 1");
        if (trees_per_partition == 0) fail("trees_per_partition must be at least 1");
        if (num_partitions == 0) fail("num_partitions must be at least 1");
        if (!(w_a >= 0.0 && w_a <= 1.0)) fail("w_a must lie in [0,1]");
        if (!(genuine_ratio > 0.0)) fail("genuine_ratio must be positive");
    }
};

struct ComponentScores {
    std::optional<double> feedback;
    std::optional<double> delayed;
    double combined = 0.0;
};

struct DelayedMember {
    BalancedForest forest;
    double weight = 0.0;
};

class EnsembleModel {
public:
    EnsembleModel(std::size_t delayed_capacity, double w_a) : capacity_(delayed_capacity), w_a_(w_a) {
        if (capacity_ == 0) throw Error(ErrorCode::invalid_argument, "delayed window must hold at least one forest");
        if (!(w_a >= 0.0 && w_a <= 1.0)) throw Error(ErrorCode::invalid_argument, "w_a must lie in [0,1]");
    }

    double w_a() const noexcept { return w_a_; }
    std::size_t capacity() const noexcept { return capacity_; }
    const std::optional<BalancedForest>& feedback() const noexcept { return feedback_; }
    const std::deque<DelayedMember>& delayed() const noexcept { return delayed_; }
    bool has_feedback() const noexcept { return feedback_.has_value(); }
    bool has_delayed() const noexcept { return !delayed_.empty(); }
    bool ready() const noexcept { return has_feedback() || has_delayed(); }

    void set_feedback(BalancedForest forest) { feedback_ = std::move(forest); }

    /// Appends the newest day forest, evicting the oldest beyond capacity.
    void roll_delayed(BalancedForest forest) {
        if (!delayed_.empty() && forest.trained_on_day <= delayed_.back().forest.trained_on_day) {
            throw Error(ErrorCode::invalid_argument, "day forest " + std::to_string(forest.trained_on_day) +
                                                         " is not newer than " +
                                                         std::to_string(delayed_.back().forest.trained_on_day));
        }
        delayed_.push_back({std::move(forest), 0.0});
        while (delayed_.size() > capacity_) delayed_.pop_front();
        reweight();
    }

    /// Weighted mean of the day forests, weights proportional to training size.
    double score_delayed(std::span<const double> x) const {
        if (delayed_.empty()) throw Error(ErrorCode::invalid_argument, "delayed ensemble is empty");
        double s = 0.0;
        for (const auto& m : delayed_) s += m.weight * m.forest.predict(x);
        return s;
    }

    double score_feedback(std::span<const double> x) const {
        if (!feedback_) throw Error(ErrorCode::invalid_argument, "no feedback forest");
        return feedback_->predict(x);
    }

    /// w_a * feedback + (1 - w_a) * delayed; a missing component falls back to
    /// the other one.
    ComponentScores score(std::span<const double> x) const {
        ComponentScores s;
        if (feedback_) s.feedback = feedback_->predict(x);
        if (!delayed_.empty()) s.delayed = score_delayed(x);
        if (s.feedback && s.delayed) s.combined = combine(*s.feedback, *s.delayed);
        else if (s.feedback) s.combined = *s.feedback;
        else if (s.delayed) s.combined = *s.delayed;
        else throw Error(ErrorCode::invalid_argument, "ensemble has neither a feedback nor a delayed component");
        return s;
    }

    double score_combined(std::span<const double> x) const { return score(x).combined; }

    double combine(double feedback, double delayed) const noexcept {
        return w_a_ * feedback + (1.0 - w_a_) * delayed;
    }

    std::vector<double> delayed_weights() const {
        std::vector<double> w;
        for (const auto& m : delayed_) w.push_back(m.weight);
        return w;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["w_a"] = w_a_;
        j["capacity"] = capacity_;
        j["feedback"] = feedback_ ? feedback_->to_json() : nlohmann::ordered_json(nullptr);
        auto& d = j["delayed"] = nlohmann::ordered_json::array();
        for (const auto& m : delayed_) d.push_back({{"weight", m.weight}, {"forest", m.forest.to_json()}});
        return j;
    }

    static EnsembleModel from_json(const nlohmann::json& j) {
        try {
            EnsembleModel e(j.at("capacity").get<std::size_t>(), j.at("w_a").get<double>());
            if (!j.at("feedback").is_null()) e.feedback_ = BalancedForest::from_json(j["feedback"]);
            for (const auto& m : j.at("delayed")) e.delayed_.push_back({BalancedForest::from_json(m.at("forest")), 0.0});
            e.reweight();
            return e;
        } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorCode::data_error, std::string("ensemble model: ") + ex.what());
        }
    }

private:
    void reweight() {
        double total = 0.0;
        for (const auto& m : delayed_) total += double(m.forest.training_size);
        for (auto& m : delayed_) {
            m.weight = total > 0.0 ? double(m.forest.training_size) / total : 1.0 / double(delayed_.size());
        }
    }

    std::size_t capacity_;
    double w_a_;
    std::optional<BalancedForest> feedback_;
    std::deque<DelayedMember> delayed_;
};

} // namespace fraudstream
