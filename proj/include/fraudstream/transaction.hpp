#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "fraudstream/error.hpp"

namespace fraudstream {

using Timestamp = std::int64_t; // epoch seconds
using Duration = std::int64_t;  // seconds

inline constexpr Duration seconds_per_hour = 3600;
inline constexpr Duration seconds_per_day = 86400;

constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) noexcept {
    const auto q = a / b;
    return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

/// Absolute day number (days since the epoch, UTC midnight boundaries).
constexpr std::int64_t day_of(Timestamp ts) noexcept { return floor_div(ts, seconds_per_day); }
constexpr std::int64_t hour_of(Timestamp ts) noexcept { return floor_div(ts, seconds_per_hour); }
constexpr Timestamp day_start(std::int64_t day) noexcept { return day * seconds_per_day; }

enum class Label : std::uint8_t { genuine = 0, fraud = 1 };

constexpr bool is_fraud(Label l) noexcept { return l == Label::fraud; }

/// Attribute layout shared by every transaction of a stream. The CSV columns
/// are named cat_1..cat_k and num_1..num_m.
struct Schema {
    std::size_t num_categorical = 0;
    std::size_t num_numeric = 0;

    static std::string categorical_name(std::size_t i) { return "cat_" + std::to_string(i + 1); }
    static std::string numeric_name(std::size_t i) { return "num_" + std::to_string(i + 1); }

    std::string csv_header() const {
        std::string h = "trx_id,card_id,timestamp,amount";
        for (std::size_t i = 0; i < num_categorical; ++i) h += "," + categorical_name(i);
        for (std::size_t i = 0; i < num_numeric; ++i) h += "," + numeric_name(i);
        h += ",label";
        return h;
    }

    bool operator==(const Schema&) const = default;
};

struct Transaction {
    std::string trx_id;
    std::string card_id;
    Timestamp timestamp = 0;
    std::optional<double> amount;
    std::vector<std::optional<std::string>> categorical;
    std::vector<std::optional<double>> numeric;
    // Ground truth. Stripped at ingestion by the streaming engine and only
    // handed back through the label vault's revelation rules.
    std::optional<Label> true_label;

    bool operator==(const Transaction&) const = default;

    bool conforms_to(const Schema& s) const noexcept {
        return categorical.size() == s.num_categorical && numeric.size() == s.num_numeric;
    }
};

// ---------------------------------------------------------------------------
// Text encoding
// ---------------------------------------------------------------------------

/// Shortest round-trip representation of a double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
    std::int64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

inline std::string to_csv_row(const Transaction& t) {
    std::string row;
    row.reserve(96);
    row += t.trx_id;
    row += ',';
    row += t.card_id;
    row += ',';
    row += std::to_string(t.timestamp);
    row += ',';
    if (t.amount) row += format_double(*t.amount);
    for (const auto& c : t.categorical) {
        row += ',';
        if (c) row += *c;
    }
    for (const auto& n : t.numeric) {
        row += ',';
        if (n) row += format_double(*n);
    }
    row += ',';
    if (t.true_label) row += is_fraud(*t.true_label) ? '1' : '0';
    return row;
}

/// Parses one CSV data row. `line_no` is only used in diagnostics. An empty
/// label field yields an unlabeled transaction.
inline Transaction parse_csv_row(std::string_view line, const Schema& schema, std::size_t line_no = 0) {
    const auto where = [&] { return "line " + std::to_string(line_no) + ": "; };
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto fields = split_csv_line(line);
    const std::size_t expected = 5 + schema.num_categorical + schema.num_numeric;
    if (fields.size() != expected) {
        throw Error(ErrorCode::data_error, where() + "expected " + std::to_string(expected) + " fields, found " +
                                               std::to_string(fields.size()));
    }
    Transaction t;
    t.trx_id = std::string(fields[0]);
    t.card_id = std::string(fields[1]);
    if (t.trx_id.empty()) throw Error(ErrorCode::data_error, where() + "empty trx_id");
    const auto ts = parse_int(fields[2]);
    if (!ts) throw Error(ErrorCode::data_error, where() + "bad timestamp '" + std::string(fields[2]) + "'");
    t.timestamp = *ts;
    if (!fields[3].empty()) {
        const auto a = parse_double(fields[3]);
        if (!a || *a < 0.0) throw Error(ErrorCode::data_error, where() + "bad amount '" + std::string(fields[3]) + "'");
        t.amount = a;
    }
    std::size_t f = 4;
    t.categorical.reserve(schema.num_categorical);
    for (std::size_t i = 0; i < schema.num_categorical; ++i, ++f) {
        if (fields[f].empty()) t.categorical.emplace_back();
        else t.categorical.emplace_back(std::string(fields[f]));
    }
    t.numeric.reserve(schema.num_numeric);
    for (std::size_t i = 0; i < schema.num_numeric; ++i, ++f) {
        if (fields[f].empty()) {
            t.numeric.emplace_back();
            continue;
        }
        const auto v = parse_double(fields[f]);
        if (!v) throw Error(ErrorCode::data_error, where() + "bad value '" + std::string(fields[f]) + "' for " +
                                                       Schema::numeric_name(i));
        t.numeric.emplace_back(*v);
    }
    const auto label = fields[f];
    if (label == "1") t.true_label = Label::fraud;
    else if (label == "0") t.true_label = Label::genuine;
    else if (!label.empty()) throw Error(ErrorCode::data_error, where() + "label must be 0 or 1, got '" + std::string(label) + "'");
    return t;
}

inline Schema parse_csv_header(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto fields = split_csv_line(line);
    if (fields.size() < 5 || fields[0] != "trx_id" || fields[1] != "card_id" || fields[2] != "timestamp" ||
        fields[3] != "amount" || fields.back() != "label") {
        throw Error(ErrorCode::data_error, "line 1: header must be trx_id,card_id,timestamp,amount,cat_*,num_*,label");
    }
    Schema s;
    std::size_t i = 4;
    for (; i + 1 < fields.size() && fields[i] == Schema::categorical_name(s.num_categorical); ++i) ++s.num_categorical;
    for (; i + 1 < fields.size() && fields[i] == Schema::numeric_name(s.num_numeric); ++i) ++s.num_numeric;
    if (i != fields.size() - 1) {
        throw Error(ErrorCode::data_error, "line 1: unexpected column '" + std::string(fields[i]) + "'");
    }
    return s;
}

inline nlohmann::ordered_json to_json(const Transaction& t) {
    nlohmann::ordered_json j;
    j["trx_id"] = t.trx_id;
    j["card_id"] = t.card_id;
    j["timestamp"] = t.timestamp;
    j["amount"] = t.amount ? nlohmann::ordered_json(*t.amount) : nlohmann::ordered_json(nullptr);
    for (std::size_t i = 0; i < t.categorical.size(); ++i) {
        j[Schema::categorical_name(i)] = t.categorical[i] ? nlohmann::ordered_json(*t.categorical[i]) : nullptr;
    }
    for (std::size_t i = 0; i < t.numeric.size(); ++i) {
        j[Schema::numeric_name(i)] = t.numeric[i] ? nlohmann::ordered_json(*t.numeric[i]) : nullptr;
    }
    j["label"] = t.true_label ? nlohmann::ordered_json(is_fraud(*t.true_label) ? 1 : 0) : nullptr;
    return j;
}

inline Transaction transaction_from_json(const nlohmann::json& j, const Schema& schema, std::size_t line_no = 0) {
    const auto where = [&] { return "line " + std::to_string(line_no) + ": "; };
    try {
        Transaction t;
        t.trx_id = j.at("trx_id").get<std::string>();
        t.card_id = j.at("card_id").get<std::string>();
        t.timestamp = j.at("timestamp").get<std::int64_t>();
        if (j.contains("amount") && !j["amount"].is_null()) t.amount = j["amount"].get<double>();
        for (std::size_t i = 0; i < schema.num_categorical; ++i) {
            const auto name = Schema::categorical_name(i);
            if (j.contains(name) && !j[name].is_null()) t.categorical.emplace_back(j[name].get<std::string>());
            else t.categorical.emplace_back();
        }
        for (std::size_t i = 0; i < schema.num_numeric; ++i) {
            const auto name = Schema::numeric_name(i);
            if (j.contains(name) && !j[name].is_null()) t.numeric.emplace_back(j[name].get<double>());
            else t.numeric.emplace_back();
        }
        if (j.contains("label") && !j["label"].is_null()) {
            const auto l = j["label"].get<int>();
            if (l != 0 && l != 1) throw Error(ErrorCode::data_error, where() + "label must be 0 or 1");
            t.true_label = l == 1 ? Label::fraud : Label::genuine;
        }
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::data_error, where() + e.what());
    }
}

/// Infers the schema of a JSON-lines record from its cat_*/num_* keys.
inline Schema schema_from_json(const nlohmann::json& j) {
    Schema s;
    while (j.contains(Schema::categorical_name(s.num_categorical))) ++s.num_categorical;
    while (j.contains(Schema::numeric_name(s.num_numeric))) ++s.num_numeric;
    return s;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

struct TransactionFile {
    Schema schema;
    std::vector<Transaction> transactions;
};

inline bool is_jsonl_path(const std::string& path) {
    const auto ends_with = [&](std::string_view suffix) {
        return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return ends_with(".jsonl") || ends_with(".json") || ends_with(".ndjson");
}

/// Reads a CSV or JSON-lines transaction file, chosen by extension.
inline TransactionFile read_transactions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path + "'");
    TransactionFile out;
    std::string line;
    std::size_t line_no = 0;
    if (is_jsonl_path(path)) {
        bool have_schema = false;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorCode::data_error, "line " + std::to_string(line_no) + ": " + e.what());
            }
            if (!have_schema) {
                out.schema = schema_from_json(j);
                have_schema = true;
            }
            out.transactions.push_back(transaction_from_json(j, out.schema, line_no));
        }
        return out;
    }
    if (!std::getline(in, line)) return out;
    ++line_no;
    out.schema = parse_csv_header(line);
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        out.transactions.push_back(parse_csv_row(line, out.schema, line_no));
    }
    return out;
}

inline void write_transactions_csv(std::ostream& out, const Schema& schema, const std::vector<Transaction>& trx) {
    out << schema.csv_header() << '\n';
    for (const auto& t : trx) out << to_csv_row(t) << '\n';
}

} // namespace fraudstream
