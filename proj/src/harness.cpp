#include "isc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "isc/errors.hpp"
#include "json.hpp"

namespace isc {

namespace {

using nlohmann::json;

enum : std::uint64_t { kInitStream = 0x1A17 };

/// Reads the keys of one JSON object and rejects any key that was never read.
class Section {
public:
    Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError(path_ + " must be a JSON object");
    }

    template <class T>
    void read(const char* key, T& dst) {
        used_.insert(key);
        const auto it = doc_.find(key);
        if (it == doc_.end()) return;
        dst = convert<T>(*it, path_ + "." + key);
    }

    const json* child(const char* key) {
        used_.insert(key);
        const auto it = doc_.find(key);
        return it == doc_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, value] : doc_.items()) {
            if (!used_.contains(key)) throw ConfigError("unknown config key " + path_ + "." + key);
        }
    }

    template <class T>
    static T convert(const json& v, const std::string& where) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(where + ": expected a number");
            return v.get<T>();
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) throw ConfigError(where + ": expected a non-negative integer");
            return v.get<T>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
            return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where + ": expected a string");
            return v.get<std::string>();
        } else {
            // std::vector<U>
            if (!v.is_array()) throw ConfigError(where + ": expected an array");
            T out;
            for (std::size_t i = 0; i < v.size(); ++i) {
                out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
            }
            return out;
        }
    }

private:
    const json& doc_;
    std::string path_;
    std::set<std::string, std::less<>> used_;
};

std::string cell_name(const CellSpec& c) {
    return "cell (target " + std::to_string(c.target) + ", k " + std::to_string(c.k) + ", method " +
           std::string(to_string(c.method)) + ", seed " + std::to_string(c.seed) + ")";
}

/// Re-raises the in-flight library error with `context` prefixed, keeping its type.
[[noreturn]] void rethrow_with_context(const std::string& context) {
    try {
        throw;
    } catch (const FormatError& e) {
        throw FormatError(context + ": " + e.what(), e.offset());
    } catch (const ShapeError& e) {
        throw ShapeError(context + ": " + e.what());
    } catch (const RangeError& e) {
        throw RangeError(context + ": " + e.what());
    } catch (const IndexError& e) {
        throw IndexError(context + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(context + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(context + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(context + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(context + ": " + e.what());
    }
}

std::size_t class_count(const std::vector<SubjectDataset>& data) {
    int max_label = -1;
    for (const auto& ds : data)
        for (const auto& s : ds.samples) max_label = std::max(max_label, s.class_label);
    return static_cast<std::size_t>(max_label + 1);
}

}  // namespace

std::string_view to_string(Method m) {
    switch (m) {
        case Method::Vanilla: return "vanilla";
        case Method::Conventional: return "conv";
        case Method::InterSubject: return "inter";
    }
    return "?";
}

Method parse_method(std::string_view name) {
    if (name == "vanilla") return Method::Vanilla;
    if (name == "conv" || name == "conventional-contrast") return Method::Conventional;
    if (name == "inter" || name == "inter-subject-contrast") return Method::InterSubject;
    throw ConfigError("unknown method \"" + std::string(name) + "\" (expected vanilla, conv or inter)");
}

void ExperimentConfig::validate() const {
    generator.validate();
    train.validate();
    if (model.encoder_dim == 0 || model.embedding_dim == 0) throw ConfigError("model: dimensions must be positive");
    if (grid.targets.empty() || grid.k_values.empty() || grid.seeds.empty() || grid.methods.empty()) {
        throw ConfigError("grid: targets, k, seeds and methods must all be non-empty");
    }
    for (std::size_t k : grid.k_values) {
        if (k < 1) throw ConfigError("grid.k: values must be >= 1");
    }
    for (int t : grid.targets) {
        if (t < 0) throw ConfigError("grid.targets: subject ids must be >= 0");
    }
}

TrainConfig ExperimentConfig::train_config_for(Method method, std::uint64_t seed) const {
    TrainConfig tc = train;
    tc.seed = seed;
    switch (method) {
        case Method::Vanilla: tc.loss.lambda = 0.0; break;
        case Method::Conventional: tc.loss.mode = SamplingMode::Conventional; break;
        case Method::InterSubject: tc.loss.mode = SamplingMode::InterSubject; break;
    }
    return tc;
}

ExperimentConfig parse_config(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    Section root(doc, "config");

    if (const json* j = root.child("generator")) {
        Section s(*j, "generator");
        auto& g = cfg.generator;
        s.read("n_subjects", g.n_subjects);
        s.read("n_classes", g.n_classes);
        s.read("channels", g.channels);
        s.read("raw_timesteps", g.raw_timesteps);
        s.read("sample_rate", g.sample_rate);
        s.read("samples_per_class_per_subject", g.samples_per_class_per_subject);
        s.read("subject_shift_strength", g.subject_shift_strength);
        s.read("noise_std", g.noise_std);
        s.read("seed", g.seed);
        s.finish();
    }
    if (const json* j = root.child("preprocess")) {
        Section s(*j, "preprocess");
        auto& p = cfg.preprocess;
        s.read("notch", p.notch);
        s.read("notch_low", p.notch_low);
        s.read("notch_high", p.notch_high);
        s.read("bandpass", p.bandpass);
        s.read("band_low", p.band_low);
        s.read("band_high", p.band_high);
        s.read("clip", p.clip);
        s.read("clip_start_ms", p.clip_start_ms);
        s.read("clip_end_ms", p.clip_end_ms);
        s.finish();
    }
    if (const json* j = root.child("model")) {
        Section s(*j, "model");
        s.read("encoder_dim", cfg.model.encoder_dim);
        s.read("embedding_dim", cfg.model.embedding_dim);
        s.finish();
    }
    if (const json* j = root.child("train")) {
        Section s(*j, "train");
        auto& t = cfg.train;
        s.read("epochs", t.epochs);
        s.read("batch_per_subject", t.batch_per_subject);
        s.read("temperature", t.loss.temperature);
        s.read("lambda", t.loss.lambda);
        s.read("normalize", t.loss.normalize);
        s.read("learning_rate", t.learning_rate);
        s.read("beta1", t.beta1);
        s.read("beta2", t.beta2);
        s.read("epsilon", t.epsilon);
        s.finish();
    }
    if (const json* j = root.child("grid")) {
        Section s(*j, "grid");
        auto& g = cfg.grid;
        s.read("targets", g.targets);
        s.read("k", g.k_values);
        s.read("seeds", g.seeds);
        std::vector<std::string> methods;
        s.read("methods", methods);
        if (!methods.empty()) {
            g.methods.clear();
            for (const auto& m : methods) g.methods.push_back(parse_method(m));
        } else if (j->contains("methods")) {
            g.methods.clear();
        }
        s.read("threads", g.threads);
        s.finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
    const auto& g = cfg.generator;
    const auto& p = cfg.preprocess;
    const auto& t = cfg.train;
    json methods = json::array();
    for (Method m : cfg.grid.methods) methods.push_back(std::string(to_string(m)));
    json doc = {
        {"generator",
         {{"n_subjects", g.n_subjects},
          {"n_classes", g.n_classes},
          {"channels", g.channels},
          {"raw_timesteps", g.raw_timesteps},
          {"sample_rate", g.sample_rate},
          {"samples_per_class_per_subject", g.samples_per_class_per_subject},
          {"subject_shift_strength", g.subject_shift_strength},
          {"noise_std", g.noise_std},
          {"seed", g.seed}}},
        {"preprocess",
         {{"notch", p.notch},
          {"notch_low", p.notch_low},
          {"notch_high", p.notch_high},
          {"bandpass", p.bandpass},
          {"band_low", p.band_low},
          {"band_high", p.band_high},
          {"clip", p.clip},
          {"clip_start_ms", p.clip_start_ms},
          {"clip_end_ms", p.clip_end_ms}}},
        {"model", {{"encoder_dim", cfg.model.encoder_dim}, {"embedding_dim", cfg.model.embedding_dim}}},
        {"train",
         {{"epochs", t.epochs},
          {"batch_per_subject", t.batch_per_subject},
          {"temperature", t.loss.temperature},
          {"lambda", t.loss.lambda},
          {"normalize", t.loss.normalize},
          {"learning_rate", t.learning_rate},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epsilon", t.epsilon}}},
        {"grid",
         {{"targets", cfg.grid.targets},
          {"k", cfg.grid.k_values},
          {"seeds", cfg.grid.seeds},
          {"methods", methods},
          {"threads", cfg.grid.threads}}},
    };
    return doc.dump(2) + "\n";
}

std::vector<SubjectDataset> prepare_data(const ExperimentConfig& cfg, const std::vector<SubjectDataset>& raw) {
    if (raw.empty()) throw DataError("no subjects in dataset");
    return preprocess(raw, cfg.generator.sample_rate, cfg.preprocess);
}

CellOutcome run_cell(const ExperimentConfig& cfg, const std::vector<SubjectDataset>& prepared, const CellSpec& cell) {
    try {
        if (cell.k < 1) throw ConfigError("k must be >= 1");
        const SplitRatios ratios{4, 1, 1};
        std::vector<SubjectDataset> source_train;
        std::optional<DatasetSplit> target_split;
        for (const auto& ds : prepared) {
            DatasetSplit split = split_dataset(ds, ratios, cell.seed);
            if (ds.subject_id == cell.target) {
                target_split = std::move(split);
            } else {
                source_train.push_back(std::move(split.train));
            }
        }
        if (!target_split) throw DataError("target subject " + std::to_string(cell.target) + " not in dataset");
        if (source_train.empty()) throw DataError("no source subjects besides the target");

        const TrainingPool pool = make_kshot_train_set(source_train, target_split->train, {cell.target, cell.k, cell.seed});
        const ModelDims dims{prepared.front().samples.front().data.rows(), cfg.model.encoder_dim,
                             cfg.model.embedding_dim, class_count(prepared)};
        ModelParams init = init_params(dims, cell.seed ^ (kInitStream << 32));

        CellOutcome out;
        out.fit = fit(pool, target_split->val.samples, std::move(init), cfg.train_config_for(cell.method, cell.seed));
        const Accuracy test = evaluate_accuracy(out.fit.best, target_split->test.samples);
        const EpochLog& best = out.fit.log[out.fit.best_epoch - 1];
        out.record = {cell.target, cell.k, cell.method, cell.seed, test.top1, test.top3, best.val_top1, best.val_top3};
        return out;
    } catch (const Error&) {
        rethrow_with_context(cell_name(cell));
    }
}

ResultRecord run_experiment_cell(const ExperimentConfig& cfg, int target, std::size_t k, Method method,
                                 std::uint64_t seed) {
    cfg.validate();
    const auto prepared = prepare_data(cfg, generate_dataset(cfg.generator));
    return run_cell(cfg, prepared, {target, k, method, seed}).record;
}

std::vector<ResultRecord> run_grid(const ExperimentConfig& cfg, const std::vector<SubjectDataset>& prepared,
                                   const std::function<void(const ResultRecord&)>& progress) {
    cfg.validate();
    std::vector<CellSpec> cells;
    for (Method m : cfg.grid.methods)
        for (int t : cfg.grid.targets)
            for (std::size_t k : cfg.grid.k_values)
                for (std::uint64_t s : cfg.grid.seeds) cells.push_back({t, k, m, s});

    std::vector<ResultRecord> records(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            try {
                records[i] = run_cell(cfg, prepared, cells[i]).record;
                if (progress) {
                    std::lock_guard lock(progress_mutex);
                    progress(records[i]);
                }
            } catch (...) {
                errors[i] = std::current_exception();
                next = cells.size();
            }
        }
    };

    std::size_t threads = cfg.grid.threads != 0 ? cfg.grid.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, cells.size());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return records;
}

std::vector<AggregateRow> aggregate(std::span<const ResultRecord> records) {
    std::map<std::tuple<int, int, std::size_t>, std::vector<const ResultRecord*>> groups;
    for (const auto& r : records) groups[{static_cast<int>(r.method), r.target, r.k}].push_back(&r);

    auto mean_std = [](const std::vector<double>& xs) {
        // Sum in sorted order so the result does not depend on record order.
        std::vector<double> v = xs;
        std::sort(v.begin(), v.end());
        double sum = 0.0;
        for (double x : v) sum += x;
        const double mean = sum / static_cast<double>(v.size());
        if (v.size() < 2) return std::pair{mean, 0.0};
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        return std::pair{mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
    };

    std::vector<AggregateRow> rows;
    for (const auto& [key, group] : groups) {
        std::vector<double> t1, t3;
        for (const auto* r : group) {
            t1.push_back(r->top1);
            t3.push_back(r->top3);
        }
        AggregateRow row;
        row.method = static_cast<Method>(std::get<0>(key));
        row.target = std::get<1>(key);
        row.k = std::get<2>(key);
        row.n = group.size();
        std::tie(row.top1_mean, row.top1_std) = mean_std(t1);
        std::tie(row.top3_mean, row.top3_std) = mean_std(t3);
        rows.push_back(row);
    }
    return rows;
}

std::string render_report(std::span<const AggregateRow> table, ReportFormat format) {
    if (table.empty()) throw DataError("report: empty table");
    std::ostringstream out;
    char line[512];
    if (format == ReportFormat::Csv) {
        out << "method,target,k,top1_mean,top1_std,top3_mean,top3_std\n";
        for (const auto& r : table) {
            std::snprintf(line, sizeof line, "%s,%d,%zu,%.4f,%.4f,%.4f,%.4f\n", std::string(to_string(r.method)).c_str(),
                          r.target, r.k, r.top1_mean, r.top1_std, r.top3_mean, r.top3_std);
            out << line;
        }
        return out.str();
    }

    std::vector<Method> methods;
    for (const auto& r : table) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    }
    std::sort(methods.begin(), methods.end());
    bool first = true;
    for (Method m : methods) {
        if (!first) out << "\n";
        first = false;
        out << "## " << to_string(m) << "\n\n";
        out << "| target | k | n | top-1 (%) | top-3 (%) |\n";
        out << "|---:|---:|---:|---:|---:|\n";
        for (const auto& r : table) {
            if (r.method != m) continue;
            std::snprintf(line, sizeof line, "| %d | %zu | %zu | %.4f ± %.4f | %.4f ± %.4f |\n", r.target, r.k, r.n,
                          r.top1_mean, r.top1_std, r.top3_mean, r.top3_std);
            out << line;
        }
    }
    return out.str();
}

void emit_report(std::span<const AggregateRow> table, ReportFormat format, const std::filesystem::path& path) {
    const std::string text = render_report(table, format);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace isc
