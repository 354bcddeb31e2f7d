#include "catch_amalgamated.hpp"

#include <random>
#include <set>

#include "fraudstream/fraudstream.hpp"

using namespace fraudstream;

namespace {

GeneratorConfig small_generator(std::size_t days = 12) {
    GeneratorConfig g;
    g.num_cards = 300;
    g.num_days = days;
    g.fraud_trx_rate = 0.02;
    g.fraud_card_rate = 0.02;
    g.fraud_signal = 2.0;
    return g;
}

EngineConfig small_engine(std::uint64_t seed = 1) {
    EngineConfig c;
    c.stream.batch_duration = 3600;
    c.stream.top_n = 10;
    c.ensemble.feedback_window_days = 3;
    c.ensemble.delayed_window_days = 3;
    c.ensemble.label_delay_days = 2;
    c.ensemble.trees_per_partition = 5;
    c.ensemble.num_partitions = 2;
    c.seed = seed;
    return c;
}

struct Harness {
    Broker broker;
    std::vector<Transaction> stream;
    std::unique_ptr<StreamEngine> engine;
    RunReport report;

    Harness(std::vector<Transaction> trx, Schema schema, EngineConfig config, CostModel cost = measured_cost())
        : stream(std::move(trx)) {
        broker.create_topic(config.stream.topic, 4, seconds_per_day);
        engine = std::make_unique<StreamEngine>(broker, schema, std::move(config), std::move(cost));
    }

    const RunReport& run() {
        TransactionFeeder feeder(broker, "transactions", stream);
        report = engine->run(feeder);
        return report;
    }
};

Transaction simple(const std::string& id, const std::string& card, Timestamp ts, double amount, Label label) {
    Transaction t;
    t.trx_id = id;
    t.card_id = card;
    t.timestamp = ts;
    t.amount = amount;
    t.categorical = {std::string("m")};
    t.true_label = label;
    return t;
}

} // namespace

TEST_CASE("merge_alerts examples") {
    const std::vector<AlertEntry> scored{{"t1", "a", 10, 0.2, 0}, {"t2", "b", 11, 0.9, 0}, {"t3", "c", 12, 0.5, 0}};
    const auto top = merge_alerts({}, scored, 2);
    REQUIRE(top.size() == 2);
    CHECK(top[0].trx_id == "t2");
    CHECK(top[1].trx_id == "t3");

    const auto same = merge_alerts({{"t1", "a", 10, 0.4, 0}}, {{"t2", "a", 20, 0.9, 0}}, 5);
    REQUIRE(same.size() == 1);
    CHECK(same[0].score == 0.9);
    CHECK(same[0].trx_id == "t2");

    // Ties: earlier timestamp first, then trx_id.
    const auto ties = merge_alerts({}, {{"z", "a", 5, 0.5, 0}, {"y", "b", 3, 0.5, 0}, {"x", "c", 3, 0.5, 0}}, 3);
    CHECK(ties[0].trx_id == "x");
    CHECK(ties[1].trx_id == "y");
    CHECK(ties[2].trx_id == "z");
    CHECK(merge_alerts({}, {}, 3).empty());
}

TEST_CASE("incremental merging equals a global top-n") {
    std::mt19937_64 g(17);
    for (int round = 0; round < 100; ++round) {
        const std::size_t top_n = 1 + g() % 15;
        std::vector<AlertEntry> table;
        std::vector<AlertEntry> all;
        const int batches = 1 + int(g() % 10);
        int id = 0;
        for (int b = 0; b < batches; ++b) {
            std::vector<AlertEntry> scored;
            const int n = int(g() % 30);
            for (int i = 0; i < n; ++i) {
                scored.push_back({"t" + std::to_string(id++), "c" + std::to_string(g() % 25), Timestamp(g() % 100),
                                  double(g() % 20) / 20.0, 0});
            }
            all.insert(all.end(), scored.begin(), scored.end());
            table = merge_alerts(table, scored, top_n);
            CHECK(table.size() <= top_n);
        }
        // Oracle: each card's best entry, fully sorted, cut.
        std::map<std::string, AlertEntry> best;
        for (const auto& e : all) {
            auto it = best.find(e.card_id);
            if (it == best.end() || ranks_before(e, it->second)) best[e.card_id] = e;
        }
        std::vector<AlertEntry> want;
        for (const auto& [c, e] : best) want.push_back(e);
        std::sort(want.begin(), want.end(), ranks_before);
        if (want.size() > top_n) want.resize(top_n);
        CHECK(table == want);
    }
}

TEST_CASE("scheduling delay recurrence") {
    CHECK(next_scheduling_delay(0.0, 100.0, 240.0) == 0.0);
    CHECK(next_scheduling_delay(0.0, 300.0, 240.0) == 60.0);
    CHECK(next_scheduling_delay(60.0, 200.0, 240.0) == 20.0);
    CHECK(next_scheduling_delay(20.0, 100.0, 240.0) == 0.0);
}

TEST_CASE("label vault release rules") {
    LabelVault v(7);
    Transaction t = simple("t1", "c1", 0, 1.0, Label::fraud);
    v.deposit(t, 3, Label::fraud);
    v.deposit(simple("t2", "c2", 0, 1.0, Label::genuine), 3, Label::genuine);
    CHECK(v.held() == 2);

    const auto leak = [](auto fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.code() == ErrorCode::label_leak;
        }
        return false;
    };
    // Not alerted, or day not over.
    CHECK(leak([&] { v.reveal_feedback("c1", 3, 4); }));
    v.mark_alerted(3, "c1");
    CHECK(leak([&] { v.reveal_feedback("c1", 3, 3); }));
    const auto fb = v.reveal_feedback("c1", 3, 4);
    REQUIRE(fb.size() == 1);
    CHECK(fb.at("t1") == Label::fraud);

    // Delayed labels of day 3 mature on day 3 + 7 + 1.
    CHECK(leak([&] { v.reveal_delayed(3, 10); }));
    CHECK(v.reveal_delayed(3, 11).size() == 2);
    REQUIRE(v.audit().size() == 2);
    CHECK(v.audit()[0].kind == RevealKind::feedback);
    CHECK(v.audit()[1].at_day == 11);

    v.forget_before(4);
    CHECK(v.held() == 0);
    CHECK_FALSE(v.was_alerted(3, "c1"));
}

TEST_CASE("feedback ledger windows") {
    FeedbackLedger l;
    auto row = std::make_shared<const AugmentedTransaction>();
    for (int day = 0; day < 6; ++day) l.add(day, {row, Label::genuine});
    CHECK(l.rows(2, 4).size() == 3);
    l.evict_before(3);
    CHECK(l.days() == std::vector<std::int64_t>{3, 4, 5});
    CHECK(l.size() == 3);
}

TEST_CASE("feeder requires time order") {
    Broker b;
    b.create_topic("transactions", 1, 100);
    std::vector<Transaction> bad{simple("a", "c", 10, 1, Label::genuine), simple("b", "c", 5, 1, Label::genuine)};
    CHECK_THROWS_AS(TransactionFeeder(b, "transactions", bad), Error);
    std::vector<Transaction> ok{simple("a", "c", 5, 1, Label::genuine), simple("b", "c", 10, 1, Label::genuine)};
    TransactionFeeder f(b, "transactions", ok);
    CHECK(f.next_timestamp() == 5);
    CHECK(f.feed_before(10) == 1);
    CHECK(f.feed_before(11) == 1);
    CHECK(f.exhausted());
}

TEST_CASE("engine run over a small stream") {
    const auto gen = small_generator();
    Harness h(generate(gen), gen.schema(), small_engine());
    std::size_t hooked = 0;
    bool saw_label = false;
    std::map<std::string, std::int64_t> hooked_day;
    h.engine->set_classify_hook([&](const Transaction& t, std::int64_t day) {
        ++hooked;
        saw_label |= t.true_label.has_value();
        hooked_day[t.trx_id] = day;
    });
    const auto& r = h.run();
    CHECK(r.status == RunStatus::complete);
    CHECK(r.transactions == h.stream.size());
    REQUIRE(r.days.size() == 12);
    CHECK_FALSE(saw_label);
    CHECK(hooked == r.scores.size());

    Phase last = Phase::initialization;
    std::size_t day_total = 0;
    for (const auto& d : r.days) {
        day_total += d.transactions;
        CHECK(d.phase >= last);
        last = d.phase;
        CHECK(d.alerts.size() <= 10);
        std::set<std::string> cards;
        for (const auto& a : d.alerts) CHECK(cards.insert(a.card_id).second);
        for (std::size_t i = 1; i < d.alerts.size(); ++i) CHECK(ranks_before(d.alerts[i - 1], d.alerts[i]));
        // No model can exist before the first labels mature on day d + 1 = 3.
        if (d.day < 3) {
            CHECK(d.phase == Phase::initialization);
            CHECK(d.scored == 0);
            CHECK(d.delayed_models == 0);
        }
        if (d.delayed_models >= 3) CHECK(d.phase == Phase::fully_operational);
        if (d.delayed_models > 0 && d.delayed_models < 3 && d.phase != Phase::fully_operational) {
            CHECK(d.phase == Phase::partial_ensemble);
        }
    }
    CHECK(day_total == h.stream.size());
    CHECK(r.days.back().phase == Phase::fully_operational);

    // Every release followed the rules: feedback the day after, for alerted
    // cards only; delayed labels d + 1 days later.
    std::map<std::int64_t, std::set<std::string>> alerted;
    for (const auto& d : r.days) {
        for (const auto& a : d.alerts) alerted[d.day].insert(a.card_id);
    }
    for (const auto& rec : h.engine->vault().audit()) {
        if (rec.kind == RevealKind::feedback) {
            CHECK(rec.at_day == rec.trx_day + 1);
            CHECK(alerted[rec.trx_day].contains(rec.card_id));
        } else {
            CHECK(rec.at_day == rec.trx_day + 3);
        }
    }
    // Scores only come after a model exists, and stay in [0, 1].
    for (const auto& s : r.scores) {
        CHECK(s.score >= 0.0);
        CHECK(s.score <= 1.0);
        CHECK(hooked_day.at(s.trx_id) == s.day);
    }
    // Batches.
    for (const auto& b : r.batches) CHECK(b.scheduling_delay >= 0.0);
}

TEST_CASE("simulated runs are deterministic given the seed") {
    const auto gen = small_generator(8);
    const auto data = generate(gen);
    Harness a(data, gen.schema(), small_engine(5));
    Harness b(data, gen.schema(), small_engine(5));
    Harness c(data, gen.schema(), small_engine(6));
    const auto& ra = a.run();
    const auto& rb = b.run();
    const auto& rc = c.run();
    REQUIRE(ra.scores.size() == rb.scores.size());
    bool differs = false;
    for (std::size_t i = 0; i < ra.scores.size(); ++i) {
        CHECK(ra.scores[i].score == rb.scores[i].score);
        differs |= ra.scores[i].score != rc.scores[i].score;
    }
    CHECK(differs);
    for (std::size_t d = 0; d < ra.days.size(); ++d) CHECK(ra.days[d].alerts == rb.days[d].alerts);
}

TEST_CASE("empty batches are recorded") {
    EngineConfig c = small_engine();
    c.stream.batch_duration = 240;
    const Timestamp day0 = 1413590400;
    std::vector<Transaction> trx{simple("a", "c1", day0 + 0, 5.0, Label::genuine),
                                 simple("b", "c1", day0 + 1000, 6.0, Label::genuine)};
    Harness h(trx, Schema{1, 0}, c);
    const auto& r = h.run();
    REQUIRE(r.batches.size() == 5);
    for (std::size_t i = 1; i <= 3; ++i) CHECK(r.batches[i].records == 0);
    CHECK(r.batches[0].records == 1);
    CHECK(r.batches[4].records == 1);
    REQUIRE(r.days.size() == 1);
    CHECK(r.days[0].alerts.empty());
}

TEST_CASE("histories of one batch exclude the batch itself") {
    const Timestamp day0 = 1413590400;
    std::vector<Transaction> trx{simple("first", "c1", day0 + 10, 5.0, Label::genuine),
                                 simple("second", "c1", day0 + 20, 6.0, Label::genuine),
                                 simple("third", "c1", day0 + 4000, 7.0, Label::genuine)};
    Harness h(trx, Schema{1, 0}, small_engine());
    h.run();
    const auto rows = h.engine->store().query_card_window("c1", day0 + 5000, 5000);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].augmented->engineered[0] == 0.0);
    CHECK(rows[1].augmented->engineered[0] == 0.0); // first was in the same batch
    CHECK(rows[2].augmented->engineered[0] == 2.0);
}

TEST_CASE("sustained overload ends in QUEUE_OVERFLOW") {
    const auto gen = small_generator(3);
    EngineConfig c = small_engine();
    c.stream.batch_duration = 240;
    c.stream.max_queue_delay = 300;
    Harness h(generate(gen), gen.schema(), c, [](const CostInput&) { return 340.0; });
    const auto& r = h.run();
    CHECK(r.status == RunStatus::queue_overflow);
    REQUIRE(r.batches.size() == 4);
    for (std::size_t i = 0; i < r.batches.size(); ++i) CHECK(r.batches[i].scheduling_delay == 100.0 * double(i));
    CHECK_THAT(r.message, Catch::Matchers::ContainsSubstring("exceeds"));
}

TEST_CASE("transient overload drains back to zero") {
    const auto gen = small_generator(2);
    EngineConfig c = small_engine();
    c.stream.batch_duration = 240;
    c.stream.max_queue_delay = 1000;
    const auto cost = [](const CostInput& in) { return in.batch_index >= 10 && in.batch_index < 13 ? 400.0 : 100.0; };
    Harness h(generate(gen), gen.schema(), c, cost);
    const auto& r = h.run();
    CHECK(r.status == RunStatus::complete);
    std::vector<double> delays;
    for (const auto& b : r.batches) delays.push_back(b.scheduling_delay);
    CHECK(delays[10] == 0.0);
    CHECK(delays[13] == 480.0);
    CHECK(delays[14] == 340.0);
    CHECK(delays[17] == 0.0);
    CHECK(delays.back() == 0.0);
}

TEST_CASE("wall-clock mode processes the whole file") {
    const auto gen = small_generator(1);
    auto data = generate(gen);
    data.resize(300);
    EngineConfig c = small_engine();
    c.stream.time_mode = TimeMode::wall;
    c.stream.batch_duration = 240;
    Broker broker;
    broker.create_topic("transactions", 2, seconds_per_day);
    StreamEngine engine(broker, gen.schema(), c);
    const Replayer replayer(TransactionFile{gen.schema(), data}, 3000.0, 1.0);
    const auto r = engine.run(replayer, 2400.0);
    CHECK(r.transactions == 300);
    CHECK(engine.store().size() == 300);
    CHECK(r.batches.size() >= 1);
}

TEST_CASE("engine configuration errors") {
    Broker broker;
    broker.create_topic("transactions", 1, 100);
    EngineConfig c = small_engine();
    c.stream.top_n = 0;
    CHECK_THROWS_AS(StreamEngine(broker, Schema{1, 0}, c), Error);
    c = small_engine();
    c.stream.windows.category_attribute = 3;
    CHECK_THROWS_AS(StreamEngine(broker, Schema{1, 0}, c), Error);
    c = small_engine();
    c.stream.topic = "missing";
    CHECK_THROWS_AS(StreamEngine(broker, Schema{1, 0}, c), Error);
}

TEST_CASE("report records round trip through JSON") {
    DayRecord d;
    d.day = 4;
    d.phase = Phase::partial_ensemble;
    d.alerts = {{"t", "c", 5, 0.5, 4}};
    d.warnings = {"w"};
    const auto back = day_from_json(nlohmann::json::parse(to_json(d).dump()));
    CHECK(back.alerts == d.alerts);
    CHECK(back.phase == d.phase);
    CHECK(back.warnings == d.warnings);
    BatchStats b;
    b.index = 3;
    b.scheduling_delay = 12.5;
    b.tasks.read = 0.25;
    const auto bb = batch_from_json(nlohmann::json::parse(to_json(b).dump()));
    CHECK(bb.scheduling_delay == 12.5);
    CHECK(bb.tasks.read == 0.25);
    CHECK(phase_from_string(to_string(Phase::fully_operational)) == Phase::fully_operational);
    CHECK_THROWS_AS(time_mode_from_string("LATER"), Error);
}
