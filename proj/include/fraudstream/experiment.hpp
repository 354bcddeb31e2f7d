#pragma once

// Seeded experiment driver: dataset -> broker -> engine for every seed, the
// per-seed dumps, and the cross-seed aggregate. The ground truth used for
// scoring comes from the source dataset, never from the engine.
//
// Layout under output_dir:
//   config.json, truth.csv, aggregate.json, aggregate_cp.csv
//   seed_<s>/report.json, scores.csv, batches.csv, daily_metrics.csv,
//            alerts_ensemble.csv, alerts_feedback.csv, alerts_delayed.csv,
//            model.json (when save_model is set)

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fraudstream/broker.hpp"
#include "fraudstream/config.hpp"
#include "fraudstream/error.hpp"
#include "fraudstream/generator.hpp"
#include "fraudstream/metrics.hpp"
#include "fraudstream/streaming.hpp"
#include "fraudstream/transaction.hpp"

namespace fraudstream {

namespace fs = std::filesystem;

inline TransactionFile load_dataset(const RunConfig& config) {
    if (config.dataset) return read_transactions(*config.dataset);
    Generator g(config.generator);
    return TransactionFile{g.schema(), g.generate_all()};
}

struct SeedRun {
    std::uint64_t seed = 0;
    RunReport report;
    RunSummary summary;
    std::optional<EnsembleModel> model;
};

/// One pass of the pipeline over `data` with learner seed `seed`.
inline SeedRun run_seed(const RunConfig& config, const TransactionFile& data, std::uint64_t seed,
                        CostModel cost = measured_cost(), StreamEngine::ClassifyHook hook = {}) {
    Broker broker;
    broker.create_topic(config.stream.topic, config.broker.partitions, config.broker.retention);
    StreamEngine engine(broker, data.schema, config.engine(seed), std::move(cost));
    if (hook) engine.set_classify_hook(std::move(hook));
    SeedRun out;
    out.seed = seed;
    if (config.stream.time_mode == TimeMode::simulated) {
        TransactionFeeder feeder(broker, config.stream.topic, data.transactions);
        out.report = engine.run(feeder);
    } else {
        Replayer replayer(data, config.replay.rate, config.replay.speedup);
        out.report = engine.run(replayer, config.replay.speedup);
    }
    out.summary = evaluate(out.report, GroundTruth(data.transactions), config.metrics_k);
    if (config.save_model) out.model = engine.ensemble();
    return out;
}

// ---------------------------------------------------------------------------
// Cross-seed aggregate
// ---------------------------------------------------------------------------

struct MeanSpread {
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;
};

inline MeanSpread mean_spread(const std::vector<double>& v) {
    MeanSpread m;
    m.n = v.size();
    if (v.empty()) return m;
    for (const double x : v) m.mean += x;
    m.mean /= double(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (const double x : v) ss += (x - m.mean) * (x - m.mean);
        m.sd = std::sqrt(ss / double(v.size() - 1));
    }
    return m;
}

struct Aggregate {
    std::vector<std::uint64_t> seeds;
    // (day, model) -> per-seed CP over seeds where the model alerted that day
    std::map<std::pair<std::int64_t, int>, MeanSpread> daily_cp;
    // phase -> model -> per-seed phase mean
    std::map<Phase, std::array<std::vector<double>, 3>> phase_cp;
    std::optional<PairedTest> ensemble_vs_delayed;  // fully operational
    std::optional<PairedTest> ensemble_vs_feedback; // fully operational
    std::size_t seeds_full_beats_partial = 0;
    std::size_t seeds_compared = 0;
};

inline Aggregate aggregate(const std::vector<std::uint64_t>& seeds, const std::vector<RunSummary>& summaries) {
    Aggregate a;
    a.seeds = seeds;
    std::map<std::pair<std::int64_t, int>, std::vector<double>> daily;
    for (const auto& s : summaries) {
        for (const auto& d : s.daily) {
            for (const auto m : all_models) {
                if (!d.cp[int(m)].empty) daily[{d.day, int(m)}].push_back(d.cp[int(m)].value);
            }
        }
        for (const auto& [phase, means] : s.phase_means) {
            for (const auto m : all_models) {
                if (means[int(m)].days > 0) a.phase_cp[phase][int(m)].push_back(means[int(m)].cp);
            }
        }
        const auto full = phase_cp(s, Phase::fully_operational, Model::ensemble);
        const auto partial = phase_cp(s, Phase::partial_ensemble, Model::ensemble);
        if (full && partial) {
            ++a.seeds_compared;
            a.seeds_full_beats_partial += *full > *partial;
        }
    }
    for (const auto& [key, values] : daily) a.daily_cp[key] = mean_spread(values);

    // Paired tests only over seeds that produced all three fully-operational means.
    std::vector<double> ens, del, fb;
    for (const auto& s : summaries) {
        const auto e = phase_cp(s, Phase::fully_operational, Model::ensemble);
        const auto d = phase_cp(s, Phase::fully_operational, Model::delayed);
        const auto f = phase_cp(s, Phase::fully_operational, Model::feedback);
        if (!e || !d || !f) continue;
        ens.push_back(*e);
        del.push_back(*d);
        fb.push_back(*f);
    }
    if (ens.size() >= 2) {
        a.ensemble_vs_delayed = paired_t_test(ens, del);
        a.ensemble_vs_feedback = paired_t_test(ens, fb);
    }
    return a;
}

inline nlohmann::ordered_json to_json(const PairedTest& t) {
    return {{"n", t.n}, {"mean_difference", t.mean_difference}, {"t", t.t_statistic}, {"p_value_one_sided", t.p_value}};
}

inline nlohmann::ordered_json to_json(const Aggregate& a) {
    nlohmann::ordered_json j;
    j["seeds"] = a.seeds;
    auto& phases = j["phase_cp"] = nlohmann::ordered_json::object();
    for (const auto& [phase, models] : a.phase_cp) {
        auto& p = phases[to_string(phase)];
        for (const auto m : all_models) {
            const auto ms = mean_spread(models[int(m)]);
            p[to_string(m)] = {{"mean", ms.mean}, {"sd", ms.sd}, {"n", ms.n}, {"per_seed", models[int(m)]}};
        }
    }
    j["ensemble_vs_delayed"] = a.ensemble_vs_delayed ? to_json(*a.ensemble_vs_delayed) : nlohmann::ordered_json(nullptr);
    j["ensemble_vs_feedback"] = a.ensemble_vs_feedback ? to_json(*a.ensemble_vs_feedback) : nlohmann::ordered_json(nullptr);
    j["seeds_full_beats_partial"] = a.seeds_full_beats_partial;
    j["seeds_compared"] = a.seeds_compared;
    return j;
}

// ---------------------------------------------------------------------------
// Dumps
// ---------------------------------------------------------------------------

inline std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io_error, "cannot write '" + path.string() + "'");
    return out;
}

inline void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::io_error, "cannot create directory '" + dir.string() + "': " + ec.message());
}

inline std::string optional_number(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

inline void write_truth(const fs::path& path, const std::vector<Transaction>& stream) {
    auto out = open_output(path);
    out << "trx_id,card_id,day,label\n";
    const GroundTruth truth(stream);
    for (const auto& t : stream) {
        if (!t.true_label) continue;
        out << t.trx_id << ',' << t.card_id << ',' << (day_of(t.timestamp) - truth.first_day()) << ','
            << (is_fraud(*t.true_label) ? "FRAUD" : "GENUINE") << '\n';
    }
}

inline GroundTruth read_truth(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::data_error, "cannot open '" + path.string() + "'");
    GroundTruth truth;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        if (++line_no == 1 || line.empty()) continue;
        const auto f = split_csv_line(line);
        const auto day = f.size() == 4 ? parse_int(f[2]) : std::nullopt;
        if (!day || (f[3] != "FRAUD" && f[3] != "GENUINE")) {
            throw Error(ErrorCode::data_error, path.string() + " line " + std::to_string(line_no) + ": malformed row");
        }
        truth.add(std::string(f[0]), std::string(f[1]), *day, f[3] == "FRAUD" ? Label::fraud : Label::genuine);
    }
    return truth;
}

inline void write_alerts(const fs::path& path, const RunReport& report, Model model, const GroundTruth& truth) {
    auto out = open_output(path);
    out << "day,card_id,trx_id,score,true_label_after_reveal\n";
    for (const auto& d : report.days) {
        for (const auto& a : alerts_of(d, model)) {
            out << a.day << ',' << a.card_id << ',' << a.trx_id << ',' << format_double(a.score) << ','
                << (truth.card_is_fraud_by(a.card_id, a.day) ? "FRAUD" : "GENUINE") << '\n';
        }
    }
}

inline void write_scores(const fs::path& path, const RunReport& report, const GroundTruth& truth) {
    auto out = open_output(path);
    out << "day,trx_id,card_id,timestamp,score,feedback,delayed,label\n";
    for (const auto& s : report.scores) {
        const auto label = truth.transaction_is_fraud(s.trx_id);
        out << s.day << ',' << s.trx_id << ',' << s.card_id << ',' << s.timestamp << ',' << format_double(s.score) << ','
            << optional_number(s.feedback) << ',' << optional_number(s.delayed) << ','
            << (label ? (*label ? "FRAUD" : "GENUINE") : "") << '\n';
    }
}

inline std::vector<ScoreRecord> read_scores(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::data_error, "cannot open '" + path.string() + "'");
    std::vector<ScoreRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        if (++line_no == 1 || line.empty()) continue;
        const auto f = split_csv_line(line);
        const auto fail = [&] {
            return Error(ErrorCode::data_error, path.string() + " line " + std::to_string(line_no) + ": malformed row");
        };
        if (f.size() != 8) throw fail();
        ScoreRecord r;
        const auto day = parse_int(f[0]);
        const auto ts = parse_int(f[3]);
        const auto score = parse_double(f[4]);
        if (!day || !ts || !score) throw fail();
        r.day = *day;
        r.trx_id = f[1];
        r.card_id = f[2];
        r.timestamp = *ts;
        r.score = *score;
        if (!f[5].empty()) r.feedback = parse_double(f[5]);
        if (!f[6].empty()) r.delayed = parse_double(f[6]);
        out.push_back(std::move(r));
    }
    return out;
}

inline void write_batches(const fs::path& path, const RunReport& report) {
    auto out = open_output(path);
    out << "index,day,start,records,processing_time,measured_time,scheduling_delay,phase,learning,read,write,feature,"
           "classify,retrain\n";
    for (const auto& b : report.batches) {
        out << b.index << ',' << b.day << ',' << b.start << ',' << b.records << ',' << format_double(b.processing_time)
            << ',' << format_double(b.measured_time) << ',' << format_double(b.scheduling_delay) << ','
            << to_string(b.phase) << ',' << (b.learning ? 1 : 0) << ',' << format_double(b.tasks.read) << ','
            << format_double(b.tasks.write) << ',' << format_double(b.tasks.feature) << ','
            << format_double(b.tasks.classify) << ',' << format_double(b.tasks.retrain) << '\n';
    }
}

inline void write_daily_metrics(const fs::path& path, const RunSummary& summary) {
    auto out = open_output(path);
    out << "day,phase,model,alerted,frauds,cp,cp_at_k,short_list\n";
    for (const auto& d : summary.daily) {
        for (const auto m : all_models) {
            const auto& cp = d.cp[int(m)];
            out << d.day << ',' << to_string(d.phase) << ',' << to_string(m) << ',' << cp.alerted << ',' << cp.frauds
                << ',' << format_double(cp.value) << ',' << format_double(cp.value_at_k) << ','
                << (cp.short_list ? 1 : 0) << '\n';
        }
    }
}

inline nlohmann::ordered_json report_json(const SeedRun& run) {
    nlohmann::ordered_json j;
    j["seed"] = run.seed;
    j["status"] = to_string(run.report.status);
    j["message"] = run.report.message;
    j["transactions"] = run.report.transactions;
    j["summary"] = to_json(run.summary);
    auto& days = j["days"] = nlohmann::ordered_json::array();
    for (const auto& d : run.report.days) days.push_back(to_json(d));
    auto& batches = j["batches"] = nlohmann::ordered_json::array();
    for (const auto& b : run.report.batches) batches.push_back(to_json(b));
    return j;
}

inline void write_seed(const fs::path& dir, const SeedRun& run, const GroundTruth& truth) {
    ensure_directory(dir);
    open_output(dir / "report.json") << report_json(run).dump(1) << '\n';
    write_scores(dir / "scores.csv", run.report, truth);
    write_batches(dir / "batches.csv", run.report);
    write_daily_metrics(dir / "daily_metrics.csv", run.summary);
    write_alerts(dir / "alerts_ensemble.csv", run.report, Model::ensemble, truth);
    write_alerts(dir / "alerts_feedback.csv", run.report, Model::feedback, truth);
    write_alerts(dir / "alerts_delayed.csv", run.report, Model::delayed, truth);
    if (run.model) open_output(dir / "model.json") << run.model->to_json().dump() << '\n';
}

inline void write_aggregate(const fs::path& dir, const Aggregate& a) {
    open_output(dir / "aggregate.json") << to_json(a).dump(1) << '\n';
    auto out = open_output(dir / "aggregate_cp.csv");
    out << "day,model,mean_cp,sd_cp,seeds\n";
    for (const auto& [key, ms] : a.daily_cp) {
        out << key.first << ',' << to_string(Model(key.second)) << ',' << format_double(ms.mean) << ','
            << format_double(ms.sd) << ',' << ms.n << '\n';
    }
}

struct ExperimentResult {
    std::vector<SeedRun> runs;
    Aggregate aggregate;
    bool overflow = false;
};

/// Runs every configured seed and writes all outputs. A run aborted by
/// queue overflow still has its partial outputs written.
inline ExperimentResult run_experiment(const RunConfig& config, std::ostream* log = nullptr,
                                       CostModel cost = measured_cost()) {
    const auto data = load_dataset(config);
    const fs::path root(config.output_dir);
    ensure_directory(root);
    open_output(root / "config.json") << to_json(config).dump(2) << '\n';
    write_truth(root / "truth.csv", data.transactions);
    const GroundTruth truth(data.transactions);

    ExperimentResult result;
    std::vector<RunSummary> summaries;
    for (const auto seed : config.seeds) {
        auto run = run_seed(config, data, seed, cost);
        write_seed(root / ("seed_" + std::to_string(seed)), run, truth);
        if (log) {
            const auto e = phase_cp(run.summary, Phase::fully_operational, Model::ensemble);
            *log << "seed " << seed << ": " << to_string(run.report.status) << ", " << run.report.transactions
                 << " transactions, " << run.report.days.size() << " days";
            if (e) *log << ", fully operational CP " << std::fixed << std::setprecision(3) << *e;
            *log << '\n';
        }
        result.overflow = result.overflow || run.report.status == RunStatus::queue_overflow;
        summaries.push_back(run.summary);
        if (!config.save_model) run.model.reset();
        result.runs.push_back(std::move(run));
    }
    result.aggregate = aggregate(config.seeds, summaries);
    write_aggregate(root, result.aggregate);
    return result;
}

// ---------------------------------------------------------------------------
// Report: recompute everything from the dumps of a run directory
// ---------------------------------------------------------------------------

struct LoadedRun {
    std::uint64_t seed = 0;
    RunReport report;
    std::size_t k = 0;
};

inline LoadedRun load_seed_dir(const fs::path& dir) {
    std::ifstream in(dir / "report.json");
    if (!in) throw Error(ErrorCode::data_error, "missing " + (dir / "report.json").string());
    LoadedRun run;
    try {
        const auto j = nlohmann::json::parse(in);
        run.seed = j.at("seed").get<std::uint64_t>();
        run.report.status = j.at("status").get<std::string>() == "COMPLETE" ? RunStatus::complete : RunStatus::queue_overflow;
        run.report.message = j.at("message").get<std::string>();
        run.report.transactions = j.at("transactions").get<std::size_t>();
        run.k = j.at("summary").at("k").get<std::size_t>();
        for (const auto& d : j.at("days")) run.report.days.push_back(day_from_json(d));
        for (const auto& b : j.at("batches")) run.report.batches.push_back(batch_from_json(b));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::data_error, (dir / "report.json").string() + ": " + e.what());
    }
    run.report.scores = read_scores(dir / "scores.csv");
    return run;
}

struct RecomputedReport {
    std::vector<std::uint64_t> seeds;
    std::vector<RunSummary> summaries;
    std::vector<std::string> statuses;
    Aggregate aggregate;
};

inline RecomputedReport recompute_report(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::data_error, "'" + dir.string() + "' is not a directory");
    std::vector<fs::path> seed_dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && entry.path().filename().string().starts_with("seed_")) seed_dirs.push_back(entry.path());
    }
    if (seed_dirs.empty()) throw Error(ErrorCode::data_error, "no seed_* reports under '" + dir.string() + "'");
    const auto truth = read_truth(dir / "truth.csv");
    std::vector<LoadedRun> runs;
    for (const auto& d : seed_dirs) runs.push_back(load_seed_dir(d));
    std::sort(runs.begin(), runs.end(), [](const LoadedRun& a, const LoadedRun& b) { return a.seed < b.seed; });
    RecomputedReport r;
    for (const auto& run : runs) {
        r.seeds.push_back(run.seed);
        r.summaries.push_back(evaluate(run.report, truth, run.k));
        r.statuses.push_back(to_string(run.report.status));
    }
    r.aggregate = aggregate(r.seeds, r.summaries);
    return r;
}

inline void print_report(std::ostream& out, const RecomputedReport& r) {
    const auto fmt = [](double v) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(1) << 100.0 * v << '%';
        return s.str();
    };
    const bool partial = std::any_of(r.statuses.begin(), r.statuses.end(), [](const auto& s) { return s != "COMPLETE"; });
    out << "runs: " << r.seeds.size() << (partial ? " (PARTIAL: at least one run aborted by QUEUE_OVERFLOW)" : "") << "\n\n";
    out << "Card precision CP_k, mean over days and seeds\n";
    out << std::left << std::setw(12) << "model";
    const Phase phases[] = {Phase::initialization, Phase::partial_ensemble, Phase::fully_operational};
    for (const auto p : phases) out << std::setw(20) << to_string(p);
    out << '\n';
    for (const auto m : {Model::delayed, Model::feedback, Model::ensemble}) {
        std::string name = to_string(m);
        name[0] = char(std::toupper(name[0]));
        out << std::setw(12) << name;
        for (const auto p : phases) {
            const auto it = r.aggregate.phase_cp.find(p);
            if (it == r.aggregate.phase_cp.end() || it->second[int(m)].empty()) {
                out << std::setw(20) << "-";
                continue;
            }
            const auto ms = mean_spread(it->second[int(m)]);
            out << std::setw(20) << (fmt(ms.mean) + " +- " + fmt(ms.sd));
        }
        out << '\n';
    }
    out << std::right << '\n';
    if (r.aggregate.ensemble_vs_delayed) {
        out << "paired one-sided t-test, ensemble > delayed: p = " << r.aggregate.ensemble_vs_delayed->p_value << '\n';
        out << "paired one-sided t-test, ensemble > feedback: p = " << r.aggregate.ensemble_vs_feedback->p_value << '\n';
    }
    out << "seeds with fully-operational CP above partial-ensemble CP: " << r.aggregate.seeds_full_beats_partial << " of "
        << r.aggregate.seeds_compared << "\n\n";
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
        const auto& s = r.summaries[i];
        out << "seed " << r.seeds[i] << " [" << r.statuses[i] << "]";
        if (s.auc_transaction) out << "  AUC trx " << std::setprecision(4) << *s.auc_transaction;
        if (s.auc_card) out << "  AUC card " << std::setprecision(4) << *s.auc_card;
        if (s.earlier) out << "  earlier detection " << fmt(s.earlier->rate);
        out << '\n';
        for (const auto& p : s.timing.phases) {
            out << "    " << std::left << std::setw(18) << to_string(p.phase) << std::right << " processing median "
                << std::setprecision(3) << p.processing_time.median << " s, p90 " << p.processing_time.p90 << " s, max "
                << p.processing_time.max << " s; delay max " << p.scheduling_delay.max << " s\n";
        }
        out << "    model update share in learning batches " << fmt(s.timing.learning_batches.model_update) << '\n';
    }
}

} // namespace fraudstream
