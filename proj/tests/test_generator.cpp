#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fraudstream/generator.hpp"

using namespace fraudstream;

namespace {

std::string to_csv(const Schema& schema, const std::vector<Transaction>& stream) {
    std::ostringstream out;
    write_transactions_csv(out, schema, stream);
    return out.str();
}

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream(path) << body;
    return path;
}

// Mann-Whitney z statistic of sample a against sample b, with midranks and the
// tie-corrected variance.
double rank_sum_z(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<std::pair<double, int>> all;
    for (double x : a) all.emplace_back(x, 0);
    for (double x : b) all.emplace_back(x, 1);
    std::sort(all.begin(), all.end());
    const double n = double(all.size());
    double rank_a = 0.0;
    double tie_term = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        const double mid = (double(i + 1) + double(j)) / 2.0;
        const double t = double(j - i);
        tie_term += t * t * t - t;
        for (std::size_t k = i; k < j; ++k) {
            if (all[k].second == 0) rank_a += mid;
        }
        i = j;
    }
    const double na = double(a.size());
    const double nb = double(b.size());
    const double u = rank_a - na * (na + 1) / 2.0;
    const double var = na * nb / 12.0 * ((n + 1) - tie_term / (n * (n - 1)));
    return (u - na * nb / 2.0) / std::sqrt(var);
}

} // namespace

TEST_CASE("default stream realizes the target fraud fraction") {
    GeneratorConfig c;
    c.seed = 1;
    c.num_cards = 1000;
    c.num_days = 40;
    c.fraud_trx_rate = 0.004;
    const auto stream = generate(c);
    const auto s = summarize(stream);
    REQUIRE(s.transactions >= 100000);
    // Within +-50% relative of the 0.4% target.
    CHECK(s.fraud_trx_rate() >= 0.002);
    CHECK(s.fraud_trx_rate() <= 0.006);
    CHECK(s.fraud_cards >= 2);
    // About four transactions per card per day.
    CHECK(double(s.transactions) / (1000.0 * 40.0) == Catch::Approx(4.0).epsilon(0.05));
}

TEST_CASE("stream invariants") {
    GeneratorConfig c;
    c.num_cards = 300;
    c.num_days = 10;
    c.drift_day = 5;
    const auto stream = generate(c);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const auto& t = stream[i];
        if (i) CHECK(stream[i - 1].timestamp <= t.timestamp);
        CHECK(ids.insert(t.trx_id).second);
        CHECK(t.conforms_to(c.schema()));
        CHECK(t.true_label.has_value());
        CHECK(t.timestamp >= c.start_timestamp);
        CHECK(t.timestamp < c.start_timestamp + 10 * seconds_per_day);
        if (t.amount) CHECK(*t.amount >= 0.0);
    }
}

TEST_CASE("same seed gives a byte-identical stream, another seed does not") {
    GeneratorConfig c;
    c.num_cards = 200;
    c.num_days = 5;
    const auto a = to_csv(c.schema(), generate(c));
    const auto b = to_csv(c.schema(), generate(c));
    CHECK(a == b);
    c.seed = 2;
    CHECK(to_csv(c.schema(), generate(c)) != a);
}

TEST_CASE("fraud amounts are shifted upwards") {
    GeneratorConfig c;
    c.num_days = 40;
    const auto stream = generate(c);
    std::vector<double> fraud;
    std::vector<double> genuine;
    for (const auto& t : stream) {
        if (!t.amount) continue;
        (is_fraud(*t.true_label) ? fraud : genuine).push_back(*t.amount);
    }
    REQUIRE(fraud.size() + genuine.size() >= 10000);
    REQUIRE(fraud.size() >= 100);
    CHECK(rank_sum_z(fraud, genuine) > 3.0);
}

TEST_CASE("drift moves the risky merchant category") {
    GeneratorConfig c;
    c.num_cards = 2000;
    c.num_days = 20;
    c.drift_day = 10;
    c.fraud_signal = 2.0;
    const auto stream = generate(c);
    std::map<std::string, int> before;
    std::map<std::string, int> after;
    for (const auto& t : stream) {
        if (!is_fraud(*t.true_label) || !t.categorical[0]) continue;
        const bool drifted = day_of(t.timestamp) - day_of(c.start_timestamp) >= 10;
        ++(drifted ? after : before)[*t.categorical[0]];
    }
    const auto top = [](const std::map<std::string, int>& m) {
        return std::max_element(m.begin(), m.end(), [](auto& x, auto& y) { return x.second < y.second; })->first;
    };
    REQUIRE_FALSE(before.empty());
    REQUIRE_FALSE(after.empty());
    CHECK(top(before) == "m07");
    CHECK(top(after) == "m03");
}

TEST_CASE("missing values appear near the configured rate") {
    GeneratorConfig c;
    c.num_cards = 500;
    c.num_days = 10;
    c.missing_rate = 0.1;
    const auto stream = generate(c);
    std::size_t missing = 0;
    std::size_t total = 0;
    for (const auto& t : stream) {
        for (const auto& v : t.categorical) missing += !v, ++total;
        for (const auto& v : t.numeric) missing += !v, ++total;
    }
    CHECK(double(missing) / double(total) == Catch::Approx(0.1).epsilon(0.1));
}

TEST_CASE("invalid generator configs are rejected") {
    const auto rejects = [](auto mutate) {
        GeneratorConfig c;
        mutate(c);
        try {
            Generator g(c);
        } catch (const Error& e) {
            return e.code() == ErrorCode::config_error;
        }
        return false;
    };
    CHECK(rejects([](GeneratorConfig& c) { c.num_cards = 0; }));
    CHECK(rejects([](GeneratorConfig& c) { c.fraud_trx_rate = 0.0; }));
    CHECK(rejects([](GeneratorConfig& c) { c.fraud_card_rate = 1.0; }));
    CHECK(rejects([](GeneratorConfig& c) { c.missing_rate = 1.0; }));
    CHECK(rejects([](GeneratorConfig& c) { c.trx_per_card_per_day = -1.0; }));
    CHECK(rejects([](GeneratorConfig& c) { c.start_timestamp += 1; }));
}

TEST_CASE("CSV and JSON-lines round trips") {
    GeneratorConfig c;
    c.num_cards = 50;
    c.num_days = 3;
    c.missing_rate = 0.2;
    const auto stream = generate(c);
    const auto csv = write_temp("fraudstream_gen.csv", to_csv(c.schema(), stream));
    const auto file = read_transactions(csv.string());
    std::filesystem::remove(csv);
    CHECK(file.schema.num_categorical == 3);
    CHECK(file.schema.num_numeric == 4);
    REQUIRE(file.transactions.size() == stream.size());
    for (std::size_t i = 0; i < stream.size(); ++i) CHECK(file.transactions[i] == stream[i]);

    std::string jsonl;
    for (const auto& t : stream) jsonl += to_json(t).dump() + "\n";
    const auto path = write_temp("fraudstream_gen.jsonl", jsonl);
    const auto again = read_transactions(path.string());
    std::filesystem::remove(path);
    REQUIRE(again.transactions.size() == stream.size());
    for (std::size_t i = 0; i < stream.size(); ++i) CHECK(again.transactions[i] == stream[i]);
}

TEST_CASE("reading files") {
    SECTION("empty file gives an empty stream") {
        const auto path = write_temp("fraudstream_empty.csv", "");
        const auto r = replay(path.string(), 100, 1);
        std::filesystem::remove(path);
        CHECK(r.size() == 0);
        CHECK(r.run([](const Transaction&, double) { FAIL("no rows expected"); }) < 0.5);
    }
    SECTION("malformed row names its line") {
        const auto path = write_temp("fraudstream_bad.csv",
                                     "trx_id,card_id,timestamp,amount,cat_1,num_1,label\n"
                                     "t1,c1,100,1.5,a,0.3,0\n"
                                     "t2,c1,oops,1.5,a,0.3,0\n");
        try {
            read_transactions(path.string());
            FAIL("expected a data error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::data_error);
            CHECK_THAT(std::string(e.what()), Catch::Matchers::ContainsSubstring("line 3"));
        }
        std::filesystem::remove(path);
    }
    SECTION("wrong field count and bad label") {
        Schema s{1, 1};
        CHECK_THROWS_AS(parse_csv_row("t1,c1,100,1.5,a,0", s, 2), Error);
        CHECK_THROWS_AS(parse_csv_row("t1,c1,100,1.5,a,0,2", s, 2), Error);
        CHECK_THROWS_AS(parse_csv_row("t1,c1,100,-1,a,0,0", s, 2), Error);
        const auto t = parse_csv_row("t1,c1,100,,,,", s, 2);
        CHECK_FALSE(t.amount);
        CHECK_FALSE(t.categorical[0]);
        CHECK_FALSE(t.numeric[0]);
        CHECK_FALSE(t.true_label);
    }
    SECTION("missing file") { CHECK_THROWS_AS(read_transactions("/nonexistent/x.csv"), Error); }
}

TEST_CASE("replay paces rows at the configured rate") {
    GeneratorConfig c;
    c.num_cards = 100;
    c.num_days = 1;
    auto stream = generate(c);
    REQUIRE(stream.size() >= 240);
    stream.resize(240);
    const Replayer r(TransactionFile{c.schema(), stream}, 240.0, 1.0);
    CHECK(r.emit_offset(239) == Catch::Approx(239.0 / 240.0));
    std::vector<std::string> seen;
    const double span = r.run([&](const Transaction& t, double) { seen.push_back(t.trx_id); });
    CHECK(span == Catch::Approx(1.0).margin(0.2));
    REQUIRE(seen.size() == 240);
    for (std::size_t i = 0; i < 240; ++i) CHECK(seen[i] == stream[i].trx_id);

    const Replayer fast(TransactionFile{c.schema(), stream}, 240.0, 10.0);
    CHECK(fast.wall_offset(239) == Catch::Approx(239.0 / 2400.0));
    CHECK(fast.run([](const Transaction&, double) {}) < 0.5);
    CHECK_THROWS_AS(Replayer(TransactionFile{}, 0.0, 1.0), Error);
    CHECK_THROWS_AS(Replayer(TransactionFile{}, 1.0, 0.0), Error);
}
