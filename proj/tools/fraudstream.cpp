// fraudstream generate|run|report [--config PATH] [--out DIR] [--seed N]
//
// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data
// error, 4 a run aborted with QUEUE_OVERFLOW.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "fraudstream/fraudstream.hpp"

namespace {

using namespace fraudstream;

constexpr int exit_other = 1;
constexpr int exit_config = 2;
constexpr int exit_data = 3;
constexpr int exit_overflow = 4;

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::config_error: return exit_config;
        case ErrorCode::data_error:
        case ErrorCode::schema_mismatch: return exit_data;
        case ErrorCode::queue_overflow: return exit_overflow;
        default: return exit_other;
    }
}

RunConfig resolve_config(const std::optional<std::string>& path, const std::optional<std::string>& out,
                         const std::optional<std::uint64_t>& seed) {
    RunConfig config = path ? load_config(*path) : RunConfig{};
    if (out) config.output_dir = *out;
    if (seed) config.seeds = {*seed};
    config.validate();
    return config;
}

int cmd_generate(const RunConfig& config, const std::optional<std::string>& out) {
    // --out names the dataset file; otherwise it goes to output_dir/dataset.csv.
    namespace fs = std::filesystem;
    fs::path path = out ? fs::path(*out) : fs::path(config.output_dir) / "dataset.csv";
    if (path.has_parent_path()) ensure_directory(path.parent_path());
    Generator g(config.generator);
    const auto stream = g.generate_all();
    auto file = open_output(path);
    write_transactions_csv(file, g.schema(), stream);
    file.close();
    if (!file) throw Error(ErrorCode::io_error, "failed writing '" + path.string() + "'");
    const auto s = summarize(stream);
    std::cout << "wrote " << s.transactions << " transactions over " << config.generator.num_days << " days to "
              << path.string() << " (fraud transactions " << s.fraud_transactions << ", fraud cards " << s.fraud_cards
              << ")\n";
    return 0;
}

int cmd_run(const RunConfig& config) {
    const auto result = run_experiment(config, &std::cout);
    std::cout << "outputs in " << config.output_dir << '\n';
    if (result.overflow) {
        for (const auto& r : result.runs) {
            if (r.report.status == RunStatus::queue_overflow) std::cerr << "QUEUE_OVERFLOW: " << r.report.message << '\n';
        }
        return exit_overflow;
    }
    return 0;
}

int cmd_report(const std::string& dir) {
    print_report(std::cout, recompute_report(dir));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming card-fraud detection engine"};
    app.require_subcommand(1);
    std::optional<std::string> config_path;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON configuration file (defaults apply when absent)");
        cmd->add_option("--out", out, "output location");
        cmd->add_option("--seed", seed, "run a single seed (run) or generator seed (generate)");
    };
    auto* generate = app.add_subcommand("generate", "write the synthetic dataset as CSV");
    auto* run = app.add_subcommand("run", "replay the dataset through the engine for every seed");
    auto* report = app.add_subcommand("report", "summarize a run directory from its dumps");
    add_common(generate);
    add_common(run);
    add_common(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        if (generate->parsed()) {
            RunConfig config = config_path ? load_config(*config_path) : RunConfig{};
            if (seed) config.generator.seed = *seed;
            config.validate();
            return cmd_generate(config, out);
        }
        if (run->parsed()) return cmd_run(resolve_config(config_path, out, seed));
        if (report->parsed()) {
            std::string dir;
            if (out) dir = *out;
            else dir = (config_path ? load_config(*config_path) : RunConfig{}).output_dir;
            return cmd_report(dir);
        }
    } catch (const Error& e) {
        std::cerr << "fraudstream: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "fraudstream: " << e.what() << '\n';
        return exit_other;
    }
    return exit_other;
}
