// Command-line front end: generate | train | grid | eval.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "isc/errors.hpp"
#include "isc/harness.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kDataError = 2, kNumericError = 3 };

isc::ExperimentConfig config_or_default(const std::string& path) {
    return path.empty() ? isc::ExperimentConfig{} : isc::load_config(path);
}

int cmd_generate(const std::string& config_path, const std::string& out) {
    const auto cfg = config_or_default(config_path);
    const auto data = isc::generate_dataset(cfg.generator);
    isc::save_dataset(data, out);
    std::size_t n = 0;
    for (const auto& ds : data) n += ds.samples.size();
    std::printf("wrote %zu samples from %zu subjects to %s\n", n, data.size(), out.c_str());
    return kOk;
}

int cmd_train(const std::string& config_path, const std::string& dataset, int target, std::size_t k,
              const std::string& method, std::uint64_t seed, const std::string& out, std::string log_path) {
    const auto cfg = config_or_default(config_path);
    const auto prepared = isc::prepare_data(cfg, isc::load_dataset(dataset));
    const auto outcome = isc::run_cell(cfg, prepared, {target, k, isc::parse_method(method), seed});
    isc::save_checkpoint(outcome.fit.best, out);
    if (log_path.empty()) log_path = out + ".log.csv";
    isc::write_log_csv(outcome.fit.log, log_path);
    const auto& r = outcome.record;
    std::printf("best epoch %zu\n", outcome.fit.best_epoch);
    std::printf("val  top-1 %.4f  top-3 %.4f\n", r.val_top1, r.val_top3);
    std::printf("test top-1 %.4f  top-3 %.4f\n", r.top1, r.top3);
    return kOk;
}

int cmd_grid(const std::string& config_path, const std::string& dataset, const std::string& report,
             const std::string& format, const std::string& records_path, std::optional<std::size_t> threads) {
    auto cfg = config_or_default(config_path);
    if (threads) cfg.grid.threads = *threads;
    const auto prepared = isc::prepare_data(cfg, isc::load_dataset(dataset));
    const auto started = std::chrono::steady_clock::now();
    std::size_t done = 0;
    const std::size_t total = cfg.grid.targets.size() * cfg.grid.k_values.size() * cfg.grid.seeds.size() *
                              cfg.grid.methods.size();
    const auto records = isc::run_grid(cfg, prepared, [&](const isc::ResultRecord& r) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        std::fprintf(stderr, "[%zu/%zu %.0fs] %s target=%d k=%zu seed=%llu top1=%.2f top3=%.2f\n", ++done, total, secs,
                     std::string(isc::to_string(r.method)).c_str(), r.target, r.k,
                     static_cast<unsigned long long>(r.seed), r.top1, r.top3);
    });
    if (!records_path.empty()) {
        std::ofstream out(records_path);
        if (!out) throw isc::IoError("cannot open " + records_path);
        out << "method,target,k,seed,top1,top3,val_top1,val_top3\n";
        char line[256];
        for (const auto& r : records) {
            std::snprintf(line, sizeof line, "%s,%d,%zu,%llu,%.4f,%.4f,%.4f,%.4f\n",
                          std::string(isc::to_string(r.method)).c_str(), r.target, r.k,
                          static_cast<unsigned long long>(r.seed), r.top1, r.top3, r.val_top1, r.val_top3);
            out << line;
        }
    }
    const auto table = isc::aggregate(records);
    const auto fmt = format == "markdown" ? isc::ReportFormat::Markdown : isc::ReportFormat::Csv;
    isc::emit_report(table, fmt, report);
    std::cout << isc::render_report(table, isc::ReportFormat::Markdown);
    return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, int target, const std::string& config_path,
             std::optional<std::uint64_t> split_seed) {
    const auto cfg = config_or_default(config_path);
    const auto params = isc::load_checkpoint(checkpoint);
    const auto prepared = isc::prepare_data(cfg, isc::load_dataset(dataset));
    const isc::SubjectDataset* subject = nullptr;
    for (const auto& ds : prepared) {
        if (ds.subject_id == target) subject = &ds;
    }
    if (!subject) throw isc::DataError("target subject " + std::to_string(target) + " not in dataset");
    std::vector<isc::Sample> samples =
        split_seed ? isc::split_dataset(*subject, {4, 1, 1}, *split_seed).test.samples : subject->samples;
    const auto acc = isc::evaluate_accuracy(params, samples);
    std::printf("subject %d (%s, %zu samples): top-1 %.4f  top-3 %.4f\n", target,
                split_seed ? "test split" : "all samples", samples.size(), acc.top1, acc.top3);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inter-subject contrastive learning for subject-adaptive signal classification"};
    app.require_subcommand(1);

    std::string config, out, dataset, method = "inter", report, format = "csv", checkpoint, log, records;
    int target = 0;
    std::size_t k = 1;
    std::uint64_t seed = 0;
    std::optional<std::size_t> threads;
    std::optional<std::uint64_t> split_seed;

    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset (EEGS)");
    gen->add_option("--config", config, "Experiment config (JSON)");
    gen->add_option("--out", out, "Output dataset path")->required();

    auto* train = app.add_subcommand("train", "Train and evaluate one grid cell");
    train->add_option("--config", config, "Experiment config (JSON)");
    train->add_option("--dataset", dataset, "EEGS dataset")->required();
    train->add_option("--target", target, "Target subject id")->required();
    train->add_option("--k", k, "Target samples per class")->required();
    train->add_option("--method", method, "vanilla | conv | inter")->check(CLI::IsMember({"vanilla", "conv", "inter"}));
    train->add_option("--seed", seed, "Cell seed");
    train->add_option("--out", out, "Checkpoint path (EEGM)")->required();
    train->add_option("--log", log, "Training log CSV (default <out>.log.csv)");

    auto* grid = app.add_subcommand("grid", "Run the full experiment grid and aggregate");
    grid->add_option("--config", config, "Experiment config (JSON)");
    grid->add_option("--dataset", dataset, "EEGS dataset")->required();
    grid->add_option("--report", report, "Report output path")->required();
    grid->add_option("--format", format, "csv | markdown")->check(CLI::IsMember({"csv", "markdown"}));
    grid->add_option("--records", records, "Also write per-cell records as CSV");
    grid->add_option("--threads", threads, "Worker threads (0 = all cores)");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one subject");
    eval->add_option("--checkpoint", checkpoint, "EEGM checkpoint")->required();
    eval->add_option("--dataset", dataset, "EEGS dataset")->required();
    eval->add_option("--target", target, "Subject id")->required();
    eval->add_option("--config", config, "Experiment config (preprocessing settings)");
    eval->add_option("--split-seed", split_seed, "Evaluate only the test split drawn with this seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*gen) return cmd_generate(config, out);
        if (*train) return cmd_train(config, dataset, target, k, method, seed, out, log);
        if (*grid) return cmd_grid(config, dataset, report, format, records, threads);
        if (*eval) return cmd_eval(checkpoint, dataset, target, config, split_seed);
    } catch (const isc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const isc::RangeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const isc::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumericError;
    } catch (const isc::Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    }
    return kOk;
}
