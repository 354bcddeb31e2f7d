#include "catch_amalgamated.hpp"

#include <random>

#include "fraudstream/preprocess.hpp"

using namespace fraudstream;

namespace {

Transaction trx(std::optional<std::string> cat, Label label, std::optional<double> amount = 1.0,
                std::optional<double> num = 0.0, Timestamp ts = 86400) {
    static int next = 0;
    Transaction t;
    t.trx_id = "t" + std::to_string(next++);
    t.card_id = "c";
    t.timestamp = ts;
    t.amount = amount;
    t.categorical = {std::move(cat)};
    t.numeric = {num};
    t.true_label = label;
    return t;
}

const Schema schema{1, 1};

std::vector<Transaction> random_corpus(std::mt19937_64& g, std::size_t n) {
    std::vector<Transaction> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::optional<std::string> cat;
        if (g() % 10) cat = "v" + std::to_string(g() % 8);
        out.push_back(trx(cat, g() % 5 == 0 ? Label::fraud : Label::genuine, double(g() % 1000) / 10.0,
                          double(g() % 200) / 100.0, Timestamp(86400 * (1 + g() % 5))));
    }
    return out;
}

} // namespace

TEST_CASE("smoothed risk of a clean category") {
    // 124 genuine rows and alpha 1 give a prior of 0.5 / 125 = 0.004.
    std::vector<Transaction> rows;
    for (int i = 0; i < 100; ++i) rows.push_back(trx("A", Label::genuine));
    for (int i = 0; i < 24; ++i) rows.push_back(trx("B", Label::genuine));
    const auto p = fit(rows, schema, 1.0);
    CHECK(p.dictionary.default_risk() == Catch::Approx(0.004).epsilon(1e-12));
    CHECK(p.dictionary.risk(0, std::string("A")) == Catch::Approx(0.004 / 101.0).epsilon(1e-12));
    CHECK(p.dictionary.risk(0, std::string("A")) == Catch::Approx(3.96e-5).epsilon(1e-3));
    CHECK(p.dictionary.risk(0, std::string("never")) == p.dictionary.default_risk());
    CHECK(p.dictionary.risk(0, std::nullopt) == p.dictionary.default_risk());
    CHECK_THROWS_AS(p.dictionary.risk(1, std::string("A")), Error);
}

TEST_CASE("default risk follows the prior formula") {
    std::mt19937_64 g(3);
    const auto rows = random_corpus(g, 500);
    const auto p = fit(rows, schema, 10.0);
    double frauds = 0;
    for (const auto& t : rows) frauds += is_fraud(*t.true_label);
    CHECK(p.dictionary.default_risk() == Catch::Approx((frauds + 5.0) / (500.0 + 10.0)));
    for (const auto& [value, r] : p.dictionary.risks(0)) {
        CHECK(r > 0.0);
        CHECK(r < 1.0);
        const auto& c = p.dictionary.counts(0).at(value);
        CHECK(r == Catch::Approx((double(c.frauds) + 10.0 * p.dictionary.default_risk()) / (double(c.count) + 10.0)));
    }
}

TEST_CASE("medians") {
    std::vector<Transaction> rows{trx("A", Label::genuine, 1.0, 3.0), trx("A", Label::genuine, 2.0, std::nullopt),
                                  trx("A", Label::genuine, 3.0, 1.0), trx("A", Label::genuine, std::nullopt, 2.0)};
    const auto m = fit_medians(rows, schema);
    CHECK(m.amount == 2.0);
    CHECK(m.numeric == std::vector<double>{2.0});
    CHECK(median_of({4.0, 1.0, 3.0, 2.0}) == 2.5);

    SECTION("an all-missing attribute is named in the error") {
        std::vector<Transaction> bad{trx("A", Label::genuine, 1.0, std::nullopt)};
        try {
            fit_medians(bad, schema);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK_THAT(std::string(e.what()), Catch::Matchers::ContainsSubstring("num_1"));
        }
    }
    CHECK_THROWS_AS(fit({}, schema), Error);
}

TEST_CASE("encode") {
    std::vector<Transaction> rows;
    for (int i = 0; i < 10; ++i) rows.push_back(trx("hot", Label::fraud, 50.0, 1.0));
    for (int i = 0; i < 90; ++i) rows.push_back(trx("cold", Label::genuine, 10.0, 2.0));
    const auto p = fit(rows, schema);
    REQUIRE(encoded_size(schema) == 3);

    const auto a = encode(trx("hot", Label::genuine, std::nullopt, 7.0), p.dictionary, p.medians);
    const auto b = encode(trx("cold", Label::genuine, std::nullopt, 7.0), p.dictionary, p.medians);
    REQUIRE(a.size() == 3);
    CHECK(a[0] == p.medians.amount);
    CHECK(a[2] == 7.0);
    CHECK(a[0] == b[0]);
    CHECK(a[2] == b[2]);
    CHECK(a[1] != b[1]);
    CHECK(encode(trx("x", Label::genuine, 1.0, std::nullopt), p.dictionary, p.medians)[2] == p.medians.numeric[0]);

    Transaction wide = trx("hot", Label::genuine);
    wide.categorical.emplace_back("extra");
    CHECK_THROWS_AS(encode(wide, p.dictionary, p.medians), Error);
}

TEST_CASE("decoding a category by its risk recovers it when risks are unique") {
    std::mt19937_64 g(11);
    const auto rows = random_corpus(g, 2000);
    const auto p = fit(rows, schema);
    std::map<double, std::string> by_risk;
    bool unique = true;
    for (const auto& [value, r] : p.dictionary.risks(0)) unique &= by_risk.emplace(r, value).second;
    REQUIRE(unique);
    for (const auto& t : rows) {
        if (!t.categorical[0]) continue;
        const auto x = encode(t, p.dictionary, p.medians);
        CHECK(by_risk.at(x[1]) == *t.categorical[0]);
    }
}

TEST_CASE("refresh") {
    std::mt19937_64 g(5);
    const auto a = random_corpus(g, 700);
    const auto b = random_corpus(g, 300);
    auto all = a;
    all.insert(all.end(), b.begin(), b.end());

    SECTION("equals a refit on the union") {
        const auto refreshed = refresh(fit(a, schema).dictionary, b);
        const auto refit = fit(all, schema).dictionary;
        CHECK(refreshed == refit);
        CHECK(refreshed.default_risk() == refit.default_risk());
        for (const auto& [value, r] : refit.risks(0)) CHECK(refreshed.risks(0).at(value) == r);
        CHECK(refreshed.fitted_on() == refit.fitted_on());
    }
    SECTION("empty batch changes nothing") {
        const auto d = fit(a, schema).dictionary;
        const auto same = refresh(d, {});
        CHECK(same == d);
        CHECK(same.risks(0) == d.risks(0));
    }
    SECTION("a fraud-only batch raises the risk of its value") {
        const auto d = fit(a, schema).dictionary;
        const auto more = refresh(d, {trx("v3", Label::fraud), trx("v3", Label::fraud)});
        CHECK(more.risk(0, std::string("v3")) > d.risk(0, std::string("v3")));
    }
    SECTION("fitted window extends") {
        auto d = fit({trx("A", Label::genuine, 1.0, 0.0, 86400)}, schema).dictionary;
        d = refresh(d, {trx("A", Label::genuine, 1.0, 0.0, 5 * 86400)});
        CHECK(d.fitted_on() == std::pair<std::int64_t, std::int64_t>{1, 5});
    }
    CHECK_THROWS_AS(refresh(fit(a, schema).dictionary, {Transaction{"x", "c", 0, 1.0, {"A"}, {0.0}, std::nullopt}}),
                    Error);
}

TEST_CASE("dictionary JSON round trip") {
    std::mt19937_64 g(8);
    const auto p = fit(random_corpus(g, 300), schema);
    const auto back = RiskDictionary::from_json(nlohmann::json::parse(p.dictionary.to_json().dump()));
    CHECK(back == p.dictionary);
    for (const auto& [value, r] : p.dictionary.risks(0)) CHECK(back.risks(0).at(value) == r);
    CHECK(MedianTable::from_json(nlohmann::json::parse(p.medians.to_json().dump())) == p.medians);
    CHECK_THROWS_AS(RiskDictionary::from_json(nlohmann::json::object()), Error);
    CHECK_THROWS_AS(RiskDictionary(1, 0.0), Error);
}
