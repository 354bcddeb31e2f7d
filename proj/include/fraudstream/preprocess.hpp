#pragma once

// Median imputation for numeric attributes and risk coding for categorical
// ones: every categorical value is replaced by a smoothed estimate of
// P(fraud | value) learned from labeled history.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fraudstream/error.hpp"
#include "fraudstream/transaction.hpp"

namespace fraudstream {

struct CategoryCounts {
    std::uint64_t count = 0;
    std::uint64_t frauds = 0;

    bool operator==(const CategoryCounts&) const = default;
};

class RiskDictionary {
public:
    static constexpr double default_alpha = 10.0;

    RiskDictionary() = default;
    RiskDictionary(std::size_t num_attributes, double alpha) : alpha_(alpha), counts_(num_attributes) {
        if (!(alpha > 0.0)) throw Error(ErrorCode::invalid_argument, "smoothing alpha must be positive");
        recompute();
    }

    std::size_t num_attributes() const noexcept { return counts_.size(); }
    double alpha() const noexcept { return alpha_; }
    std::uint64_t total() const noexcept { return total_; }
    std::uint64_t total_frauds() const noexcept { return total_frauds_; }
    std::optional<std::pair<std::int64_t, std::int64_t>> fitted_on() const { return fitted_on_; }

    /// (frauds + alpha/2) / (total + alpha) over everything accumulated.
    double default_risk() const noexcept { return default_risk_; }

    /// Smoothed risk of a value, or default_risk() for unseen and missing values.
    double risk(std::size_t attribute, const std::optional<std::string>& value) const {
        check_attribute(attribute);
        if (!value) return default_risk_;
        const auto& m = risks_[attribute];
        const auto it = m.find(*value);
        return it == m.end() ? default_risk_ : it->second;
    }

    const std::unordered_map<std::string, double>& risks(std::size_t attribute) const {
        check_attribute(attribute);
        return risks_[attribute];
    }

    const std::map<std::string, CategoryCounts>& counts(std::size_t attribute) const {
        check_attribute(attribute);
        return counts_[attribute];
    }

    /// Folds labeled transactions into the counts and recomputes every risk.
    void accumulate(const std::vector<Transaction>& labeled) {
        if (labeled.empty()) return;
        for (const auto& t : labeled) {
            if (!t.true_label) throw Error(ErrorCode::invalid_argument, "risk dictionary needs labeled transactions");
            if (t.categorical.size() != counts_.size()) {
                throw Error(ErrorCode::schema_mismatch, "transaction " + t.trx_id + " has " +
                                                            std::to_string(t.categorical.size()) +
                                                            " categorical attributes, dictionary expects " +
                                                            std::to_string(counts_.size()));
            }
            const bool fraud = is_fraud(*t.true_label);
            ++total_;
            total_frauds_ += fraud;
            for (std::size_t a = 0; a < counts_.size(); ++a) {
                if (!t.categorical[a]) continue;
                auto& c = counts_[a][*t.categorical[a]];
                ++c.count;
                c.frauds += fraud;
            }
            const auto day = day_of(t.timestamp);
            if (!fitted_on_) fitted_on_ = {day, day};
            fitted_on_->first = std::min(fitted_on_->first, day);
            fitted_on_->second = std::max(fitted_on_->second, day);
        }
        recompute();
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["alpha"] = alpha_;
        j["total"] = total_;
        j["total_frauds"] = total_frauds_;
        j["default_risk"] = default_risk_;
        j["fitted_on"] = fitted_on_ ? nlohmann::ordered_json::array({fitted_on_->first, fitted_on_->second})
                                    : nlohmann::ordered_json(nullptr);
        auto& attrs = j["attributes"] = nlohmann::ordered_json::array();
        for (std::size_t a = 0; a < counts_.size(); ++a) {
            nlohmann::ordered_json values = nlohmann::ordered_json::object();
            for (const auto& [value, c] : counts_[a]) {
                values[value] = {{"count", c.count}, {"frauds", c.frauds}, {"risk", risks_[a].at(value)}};
            }
            attrs.push_back({{"name", Schema::categorical_name(a)}, {"values", values}});
        }
        return j;
    }

    static RiskDictionary from_json(const nlohmann::json& j) {
        try {
            const auto& attrs = j.at("attributes");
            RiskDictionary d(attrs.size(), j.at("alpha").get<double>());
            d.total_ = j.at("total").get<std::uint64_t>();
            d.total_frauds_ = j.at("total_frauds").get<std::uint64_t>();
            if (!j.at("fitted_on").is_null()) {
                d.fitted_on_ = {j["fitted_on"][0].get<std::int64_t>(), j["fitted_on"][1].get<std::int64_t>()};
            }
            for (std::size_t a = 0; a < attrs.size(); ++a) {
                for (const auto& [value, c] : attrs[a].at("values").items()) {
                    d.counts_[a][value] = {c.at("count").get<std::uint64_t>(), c.at("frauds").get<std::uint64_t>()};
                }
            }
            d.recompute();
            return d;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::data_error, std::string("risk dictionary: ") + e.what());
        }
    }

    bool operator==(const RiskDictionary& o) const {
        return alpha_ == o.alpha_ && total_ == o.total_ && total_frauds_ == o.total_frauds_ && counts_ == o.counts_;
    }

private:
    void check_attribute(std::size_t attribute) const {
        if (attribute >= counts_.size()) {
            throw Error(ErrorCode::schema_mismatch, "categorical attribute " + std::to_string(attribute) + " not in schema");
        }
    }

    void recompute() {
        default_risk_ = (double(total_frauds_) + alpha_ * 0.5) / (double(total_) + alpha_);
        risks_.assign(counts_.size(), {});
        for (std::size_t a = 0; a < counts_.size(); ++a) {
            for (const auto& [value, c] : counts_[a]) {
                risks_[a][value] = (double(c.frauds) + alpha_ * default_risk_) / (double(c.count) + alpha_);
            }
        }
    }

    double alpha_ = default_alpha;
    std::uint64_t total_ = 0;
    std::uint64_t total_frauds_ = 0;
    double default_risk_ = 0.5;
    std::vector<std::map<std::string, CategoryCounts>> counts_;
    std::vector<std::unordered_map<std::string, double>> risks_;
    std::optional<std::pair<std::int64_t, std::int64_t>> fitted_on_;
};

struct MedianTable {
    double amount = 0.0;
    std::vector<double> numeric;

    bool operator==(const MedianTable&) const = default;

    nlohmann::ordered_json to_json() const { return {{"amount", amount}, {"numeric", numeric}}; }

    static MedianTable from_json(const nlohmann::json& j) {
        return MedianTable{j.at("amount").get<double>(), j.at("numeric").get<std::vector<double>>()};
    }
};

inline double median_of(std::vector<double> values) {
    if (values.empty()) throw Error(ErrorCode::invalid_argument, "median of an empty sample");
    const auto mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

/// Medians of every numeric attribute, ignoring missing values.
inline MedianTable fit_medians(const std::vector<Transaction>& rows, const Schema& schema) {
    if (rows.empty()) throw Error(ErrorCode::invalid_argument, "cannot fit medians on an empty set");
    std::vector<double> amounts;
    std::vector<std::vector<double>> numeric(schema.num_numeric);
    for (const auto& t : rows) {
        if (!t.conforms_to(schema)) throw Error(ErrorCode::schema_mismatch, "transaction " + t.trx_id + " does not match schema");
        if (t.amount) amounts.push_back(*t.amount);
        for (std::size_t i = 0; i < schema.num_numeric; ++i) {
            if (t.numeric[i]) numeric[i].push_back(*t.numeric[i]);
        }
    }
    if (amounts.empty()) throw Error(ErrorCode::invalid_argument, "attribute 'amount' is missing in every row");
    MedianTable m;
    m.amount = median_of(std::move(amounts));
    for (std::size_t i = 0; i < schema.num_numeric; ++i) {
        if (numeric[i].empty()) {
            throw Error(ErrorCode::invalid_argument, "attribute '" + Schema::numeric_name(i) + "' is missing in every row");
        }
        m.numeric.push_back(median_of(std::move(numeric[i])));
    }
    return m;
}

struct Preprocessor {
    RiskDictionary dictionary;
    MedianTable medians;
};

inline Preprocessor fit(const std::vector<Transaction>& labeled, const Schema& schema,
                        double alpha = RiskDictionary::default_alpha) {
    if (labeled.empty()) throw Error(ErrorCode::invalid_argument, "cannot fit preprocessing on an empty set");
    Preprocessor p{RiskDictionary(schema.num_categorical, alpha), fit_medians(labeled, schema)};
    p.dictionary.accumulate(labeled);
    return p;
}

inline RiskDictionary refresh(RiskDictionary dict, const std::vector<Transaction>& new_labeled) {
    dict.accumulate(new_labeled);
    return dict;
}

/// Length of the encoded raw part: amount, categorical risks, numerics.
constexpr std::size_t encoded_size(const Schema& schema) noexcept {
    return 1 + schema.num_categorical + schema.num_numeric;
}

inline std::vector<double> encode(const Transaction& t, const RiskDictionary& dict, const MedianTable& medians) {
    if (t.categorical.size() != dict.num_attributes() || t.numeric.size() != medians.numeric.size()) {
        throw Error(ErrorCode::schema_mismatch, "transaction " + t.trx_id + " does not match the fitted schema");
    }
    std::vector<double> x;
    x.reserve(1 + t.categorical.size() + t.numeric.size());
    x.push_back(t.amount ? *t.amount : medians.amount);
    for (std::size_t a = 0; a < t.categorical.size(); ++a) x.push_back(dict.risk(a, t.categorical[a]));
    for (std::size_t i = 0; i < t.numeric.size(); ++i) x.push_back(t.numeric[i] ? *t.numeric[i] : medians.numeric[i]);
    return x;
}

} // namespace fraudstream
