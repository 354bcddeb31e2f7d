#include "catch_amalgamated.hpp"

#include <filesystem>
#include <random>

#include "oracles.hpp"

using namespace fraudstream;

TEST_CASE("read your write") {
    TransactionStore s;
    s.insert(oracle::make_row("c1", 7200, "t1", 5.0));
    const auto got = s.query_card_window("c1", 7201, 10);
    REQUIRE(got.size() == 1);
    CHECK(got[0].trx_id() == "t1");
    CHECK(got[0].hour_bucket == 2);
    CHECK(s.query_card_window("nobody", 7201, 10).empty());
}

TEST_CASE("insert rejects an inconsistent hour bucket") {
    TransactionStore s;
    auto row = oracle::make_row("c1", 7200, "t1", 5.0);
    row.hour_bucket = 7200 / 3600 + 1;
    CHECK_THROWS_AS(s.insert(row), Error);
    CHECK(s.size() == 0);
}

TEST_CASE("query window is half open") {
    TransactionStore s;
    s.insert(oracle::make_row("c", 1000, "a", 1.0));
    s.insert(oracle::make_row("c", 2000, "b", 1.0));
    const auto got = s.query_card_window("c", 2000, 1000);
    REQUIRE(got.size() == 1);
    CHECK(got[0].trx_id() == "a");
    CHECK_THROWS_AS(s.query_card_window("c", 2000, 0), Error);
}

TEST_CASE("duplicate key replaces in place") {
    TransactionStore s;
    s.insert(oracle::make_row("c", 50, "t", 1.0));
    s.insert(oracle::make_row("c", 50, "t", 9.0));
    CHECK(s.size() == 1);
    CHECK(*s.query_card_window("c", 51, 100)[0].augmented->base.amount == 9.0);
    CHECK(s.profile("c")->count == 1);
    CHECK(s.profile("c")->amount_sum == 9.0);
}

TEST_CASE("prune edge cases") {
    TransactionStore s;
    CHECK(s.prune(0) == 0);
    for (int i = 0; i < 20; ++i) s.insert(oracle::make_row("c" + std::to_string(i % 3), 1000 * i, "t" + std::to_string(i), 1.0));
    CHECK(s.prune(0) == 0);
    CHECK(s.prune(19000 + 1) == 20);
    CHECK(s.size() == 0);
    CHECK(s.bucket_count() == 0);
}

TEST_CASE("random store agrees with a linear scan") {
    std::mt19937_64 g(7);
    TransactionStore s;
    oracle::FlatStore flat;
    for (int i = 0; i < 10000; ++i) {
        const auto card = "c" + std::to_string(g() % 60);
        const Timestamp ts = Timestamp(g() % (30 * 86400));
        const auto trx = "t" + std::to_string(g() % 20000);
        const double amount = double(g() % 10000) / 100.0;
        s.insert(oracle::make_row(card, ts, trx, amount));
        flat.insert({card, ts, trx, amount});
    }
    CHECK(s.size() == flat.rows().size());
    // Every row is reachable through a keyed query and the full scan.
    std::size_t scanned = s.scan_range(0, 31 * 86400).size();
    CHECK(scanned == flat.rows().size());
    for (const auto& r : flat.rows()) {
        const auto got = s.query_card_window(r.card, r.ts + 1, 1);
        const bool found = std::any_of(got.begin(), got.end(), [&](const StoredRow& x) { return x.trx_id() == r.trx; });
        CHECK(found);
    }
    for (int q = 0; q < 2000; ++q) {
        const auto card = "c" + std::to_string(g() % 60);
        const Timestamp end = Timestamp(g() % (31 * 86400));
        const Duration window = 1 + Duration(g() % (8 * 86400));
        const auto got = s.query_card_window(card, end, window);
        const auto want = flat.query(card, end, window);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].timestamp == want[i].ts);
            CHECK(got[i].trx_id() == want[i].trx);
        }
        for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i - 1].timestamp <= got[i].timestamp);
        const auto bound = std::size_t((window + 3599) / 3600) + 1;
        CHECK(s.last_buckets_visited() <= bound);
    }
    const Timestamp cut = 12 * 86400 + 1234;
    CHECK(s.prune(cut) == flat.prune(cut));
    CHECK(s.size() == flat.rows().size());
    CHECK(s.scan_range(0, cut).empty());
}

TEST_CASE("profiles survive pruning") {
    TransactionStore s;
    s.insert(oracle::make_row("c", 100, "a", 10.0));
    s.insert(oracle::make_row("c", 200, "b", std::nullopt));
    s.insert(oracle::make_row("c", 90000, "d", 30.0));
    s.prune(50000);
    const auto p = s.profile("c");
    REQUIRE(p);
    CHECK(p->first_seen == 100);
    CHECK(p->count == 3);
    CHECK(p->amount_count == 2);
    CHECK(p->amount_sum == 40.0);
    CHECK_FALSE(s.profile("x"));
}

TEST_CASE("snapshot round trip") {
    TransactionStore s;
    for (int i = 0; i < 50; ++i) {
        auto row = oracle::make_row("c" + std::to_string(i % 5), 1000 + 997 * i, "t" + std::to_string(i),
                                    i % 7 ? std::optional<double>(i * 1.25) : std::nullopt, "m" + std::to_string(i % 3));
        auto aug = *row.augmented;
        aug.engineered = {double(i), 0.5};
        aug.encoded_raw = {1.0 / (i + 1)};
        s.insert(StoredRow::from(aug));
    }
    const auto path = std::filesystem::temp_directory_path() / "fraudstream_store_snapshot.jsonl";
    s.save_snapshot(path.string());
    const auto loaded = TransactionStore::load_snapshot(path.string(), Schema{1, 0});
    std::filesystem::remove(path);
    REQUIRE(loaded.size() == s.size());
    const auto a = s.scan_range(0, 1'000'000);
    const auto b = loaded.scan_range(0, 1'000'000);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].augmented == *b[i].augmented);
}
