// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.
// ISC_ACCEPTANCE=1,3,8 limits the run to the listed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "isc/batching.hpp"
#include "isc/errors.hpp"
#include "isc/harness.hpp"
#include "isc/losses.hpp"
#include "isc/model.hpp"
#include "isc/signals.hpp"
#include "support.hpp"

using namespace isc;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& b) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

// ---- 1: analytic gradients against central differences ----

Verdict gradient_check() {
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        std::mt19937_64 rng(seed);
        ModelParams params = init_params({3, 4, 4, 3}, seed);
        std::normal_distribution<double> nd(0.0, 0.2);
        for (Matrix* b : {&params.b_reset, &params.b_update, &params.b_candidate, &params.b_embed, &params.b_classify})
            for (double& v : b->values()) v = nd(rng);
        const auto samples = test::random_samples({0, 0, 1, 1, 2, 2}, {0, 1, 0, 2, 1, 2}, 3, 5, rng);
        const auto batch = test::pointers(samples);
        for (bool normalize : {true, false}) {
            LossHyperparams hp;
            hp.lambda = 1.0;
            hp.temperature = 0.05;
            hp.mode = SamplingMode::InterSubject;
            hp.normalize = normalize;
            const Vector analytic = flatten(loss_and_gradients(params, batch, hp).grads);
            const Vector numeric = flatten(finite_difference_grad(
                [&](const ModelParams& q) { return batch_loss(q, batch, hp).total; }, params, 1e-5));
            for (std::size_t i = 0; i < analytic.size(); ++i) {
                if (std::abs(analytic[i]) <= 1e-8) continue;
                worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::abs(analytic[i]));
                ++checked;
            }
        }
    }
    return {worst < 1e-4, fmt("max relative error %.3e over %zu coordinates (limit 1e-4)", worst, checked)};
}

// ---- 2: contrastive sets against exhaustive enumeration ----

Verdict sampling_oracle() {
    std::mt19937_64 rng(2024);
    std::size_t mismatches = 0, invariant_failures = 0, entries = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n_subjects = std::uniform_int_distribution<int>(1, 5)(rng);
        const int n_classes = std::uniform_int_distribution<int>(1, 6)(rng);
        const std::size_t size = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
        std::vector<int> s, y;
        while (s.size() < size) {
            const int si = std::uniform_int_distribution<int>(0, n_subjects - 1)(rng);
            const int yi = std::uniform_int_distribution<int>(0, n_classes - 1)(rng);
            // Oversampling duplicates: repeat the entry a few times.
            const int copies = std::uniform_int_distribution<int>(0, 3)(rng) == 0 ? 3 : 1;
            for (int c = 0; c < copies && s.size() < size; ++c) {
                s.push_back(si);
                y.push_back(yi);
            }
        }
        std::vector<std::size_t> order(size);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> ss(size), yy(size);
        for (std::size_t i = 0; i < size; ++i) ss[i] = s[order[i]], yy[i] = y[order[i]];

        for (SamplingMode mode : {SamplingMode::Conventional, SamplingMode::InterSubject}) {
            const ContrastiveSets sets = build_sets(ss, yy, mode);
            if (sets.anchors.size() != size || sets.positives.size() != size || sets.negatives.size() != size) {
                ++mismatches;
                continue;
            }
            for (std::size_t i = 0; i < size; ++i) {
                ++entries;
                const test::PairSets want = test::enumerate_pairs(ss, yy, i, mode);
                if (sets.anchors[i] != want.anchors || sets.positives[i] != want.positives ||
                    sets.negatives[i] != want.negatives)
                    ++mismatches;
                // P and N partition A, i is never in A, and every member has the right relation to i.
                std::set<std::size_t> a(sets.anchors[i].begin(), sets.anchors[i].end());
                std::set<std::size_t> pn(sets.positives[i].begin(), sets.positives[i].end());
                bool ok = !a.contains(i) && a.size() == sets.anchors[i].size();
                for (std::size_t j : sets.negatives[i]) ok = ok && pn.insert(j).second;
                ok = ok && pn == a;
                for (std::size_t j : sets.positives[i]) {
                    ok = ok && yy[j] == yy[i];
                    if (mode == SamplingMode::InterSubject) ok = ok && ss[j] != ss[i];
                }
                for (std::size_t j : sets.negatives[i]) {
                    ok = ok && yy[j] != yy[i];
                    if (mode == SamplingMode::InterSubject) ok = ok && ss[j] == ss[i];
                }
                if (!ok) ++invariant_failures;
            }
        }
    }
    return {mismatches == 0 && invariant_failures == 0,
            fmt("1000 batches, %zu anchor rows: %zu oracle mismatches, %zu invariant failures", entries, mismatches,
                invariant_failures)};
}

// ---- 3: loss values against direct formulas ----

Verdict loss_oracles() {
    std::mt19937_64 rng(77);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 40)(rng);
        const std::size_t dim = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
        std::vector<int> s(n), y(n);
        std::vector<Vector> z(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = std::uniform_int_distribution<int>(0, 3)(rng);
            y[i] = std::uniform_int_distribution<int>(0, 4)(rng);
            z[i] = test::random_vector(dim, rng);
        }
        const auto traces = test::traces_from_features(z);
        for (SamplingMode mode : {SamplingMode::Conventional, SamplingMode::InterSubject})
            for (bool normalize : {true, false}) {
                const double tau = normalize ? 0.05 : 2.0;
                const double got = inter_subject_contrastive(traces, s, y, tau, mode, normalize).value;
                const double want = test::naive_contrastive(z, s, y, tau, mode, normalize).value;
                worst = std::max(worst, std::abs(got - want));
            }
    }
    const std::vector<Vector> same(6, Vector{0.6, -0.8, 0.0});
    const double canonical =
        inter_subject_contrastive(test::traces_from_features(same), test::kCanonicalSubjects, test::kCanonicalLabels, 0.05,
                                  SamplingMode::InterSubject, true)
            .value;
    const std::size_t K = 8;
    std::vector<ForwardTrace> uniform(5);
    for (auto& t : uniform) t.p = Vector(K, 1.0 / K);
    const double ce = cross_entropy(uniform, std::vector<int>{0, 3, 7, 1, 5});
    const double canonical_err = std::abs(canonical - std::log(1.5));
    const double ce_err = std::abs(ce - std::log(double(K)));
    return {worst <= 1e-9 && canonical_err <= 1e-9 && ce_err <= 1e-9,
            fmt("oracle max |diff| %.2e; identical features %.12f (ln 1.5 err %.1e); uniform CE err %.1e", worst,
                canonical, canonical_err, ce_err)};
}

// ---- 4: balanced batches with oversampled target ----

Verdict batch_protocol() {
    GeneratorConfig g;
    g.n_classes = 8;
    g.channels = 1;
    g.raw_timesteps = 200;
    g.samples_per_class_per_subject = 60;  // 480 per subject
    const auto data = generate_dataset(g);
    const std::vector<SubjectDataset> sources(data.begin() + 1, data.end());
    const TrainingPool pool = make_kshot_train_set(sources, data[0], {0, 5, 0});  // 8 classes x 5 = 40

    std::map<int, std::size_t> pool_sizes;
    for (const Sample* s : pool.samples) ++pool_sizes[s->subject_id];
    bool ok = pool_sizes.at(0) == 40 && pool_sizes.at(1) == 480 && pool_sizes.at(2) == 480 && pool_sizes.at(3) == 480;
    Rng rng = make_rng(4);
    std::size_t batches = 0;
    for (; batches < 200 && ok; ++batches) {
        const Batch b = sample_balanced_batch(pool, 200, rng);
        std::map<int, std::size_t> per_subject;
        std::map<const Sample*, std::size_t> target_counts;
        for (const auto& e : b.entries) {
            ++per_subject[e.subject_id];
            if (e.subject_id == 0) ++target_counts[e.sample];
        }
        for (const auto& [s, n] : per_subject) ok = ok && n == 200;
        ok = ok && per_subject.size() == 4 && target_counts.size() == 40;
        for (const auto& [s, n] : target_counts) ok = ok && n == 5;
    }
    return {ok, fmt("%zu batches of 4 x 200 from pools 480/480/480/40; target samples appear exactly 5 times each",
                    batches)};
}

// ---- 5: trend grid on the default synthetic benchmark ----

Verdict trend_grid() {
    const auto path = std::filesystem::path(ISC_SOURCE_DIR) / "configs" / "benchmark.json";
    const ExperimentConfig cfg = load_config(path);
    const GeneratorConfig defaults;
    bool ok = cfg.generator.n_subjects == 4 && cfg.generator.n_classes == 8 && cfg.generator.channels == 16 &&
              cfg.generator.subject_shift_strength == 0.8 && cfg.generator.noise_std == 0.5 &&
              cfg.grid.seeds.size() >= 5;
    if (!ok) return {false, "configs/benchmark.json does not describe the default benchmark"};

    const auto t0 = std::chrono::steady_clock::now();
    const auto prepared = prepare_data(cfg, generate_dataset(cfg.generator));
    if (prepared.front().samples.front().data.cols() != 160) return {false, "prepared samples are not 160 steps long"};
    const auto records = run_grid(cfg, prepared);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // Mean over every target and seed of each (method, k).
    std::map<std::pair<Method, std::size_t>, std::pair<double, std::size_t>> acc;
    for (const auto& r : records) {
        auto& a = acc[{r.method, r.k}];
        a.first += r.top1;
        ++a.second;
    }
    auto mean = [&](Method m, std::size_t k) {
        const auto& a = acc.at({m, k});
        return a.first / static_cast<double>(a.second);
    };
    const std::size_t k_lo = cfg.grid.k_values.front(), k_hi = cfg.grid.k_values.back();
    std::string table;
    for (Method m : {Method::Vanilla, Method::Conventional, Method::InterSubject}) {
        table += fmt("\n    %-8s", std::string(to_string(m)).c_str());
        for (std::size_t k : cfg.grid.k_values) table += fmt("  k=%zu %6.2f", k, mean(m, k));
    }
    const double gap_lo = mean(Method::InterSubject, k_lo) - mean(Method::Vanilla, k_lo);
    const double gap_hi = mean(Method::InterSubject, k_hi) - mean(Method::Vanilla, k_hi);
    const bool a = gap_lo >= 5.0;
    const bool b = mean(Method::InterSubject, k_lo) >= mean(Method::Conventional, k_lo);
    const bool c = gap_lo > gap_hi;
    bool d = true;
    for (Method m : {Method::Vanilla, Method::Conventional, Method::InterSubject})
        for (std::size_t i = 1; i < cfg.grid.k_values.size(); ++i)
            d = d && mean(m, cfg.grid.k_values[i]) > mean(m, cfg.grid.k_values[i - 1]);
    const bool fast = seconds < 1200.0;
    auto mark = [](bool v) { return v ? "ok" : "FAIL"; };
    return {a && b && c && d && fast,
            fmt("(a) gap@k=%zu %+.2f pp [%s] (b) inter vs conv [%s] (c) gap@k=%zu %+.2f [%s] (d) monotone [%s] "
                "runtime %.0fs [%s]",
                k_lo, gap_lo, mark(a), mark(b), k_hi, gap_hi, mark(c), mark(d), seconds, mark(fast)) +
                table};
}

// ---- 6: repeated CLI training is bit-identical ----

Verdict cli_determinism() {
    test::TempDir dir("accept_cli");
    {
        std::ofstream cfg(dir / "c.json");
        cfg << R"({"generator": {"n_subjects": 3, "n_classes": 3, "channels": 4, "samples_per_class_per_subject": 12},
                   "model": {"encoder_dim": 8, "embedding_dim": 8},
                   "train": {"epochs": 4, "batch_per_subject": 8}})";
    }
    const std::string cli = ISC_CLI_PATH;
    const std::string d = dir.path().string();
    auto run = [](const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()) == 0; };
    if (!run(cli + " generate --config " + d + "/c.json --out " + d + "/data.eegs"))
        return {false, "generate failed"};
    const std::string train = cli + " train --config " + d + "/c.json --dataset " + d +
                              "/data.eegs --target 1 --k 2 --method inter --seed 3";
    for (const char* tag : {"a", "b"}) {
        const std::string t(tag);
        if (!run(train + " --out " + d + "/" + t + ".eegm --log " + d + "/" + t + ".csv"))
            return {false, "train failed"};
    }
    const bool same_ckpt = read_bytes(dir / "a.eegm") == read_bytes(dir / "b.eegm");
    const bool same_log = read_bytes(dir / "a.csv") == read_bytes(dir / "b.csv");
    const bool non_empty = !read_bytes(dir / "a.eegm").empty() && !read_bytes(dir / "a.csv").empty();
    return {same_ckpt && same_log && non_empty,
            fmt("two `train` runs: checkpoint %s, log %s", same_ckpt ? "identical" : "DIFFERENT",
                same_log ? "identical" : "DIFFERENT")};
}

// ---- 7: preprocessing chain ----

double tone_gain_db(double hz, std::size_t n, const std::function<Matrix(const Matrix&)>& filter) {
    const double rate = 1000.0;
    Matrix x(1, n);
    for (std::size_t t = 0; t < n; ++t) x(0, t) = std::sin(2.0 * std::numbers::pi * hz * double(t) / rate + 0.3);
    const Matrix y = filter(x);
    // Amplitude at the tone frequency by direct correlation.
    auto amplitude = [&](const Matrix& m) {
        double re = 0, im = 0;
        for (std::size_t t = 0; t < n; ++t) {
            const double w = 2.0 * std::numbers::pi * hz * double(t) / rate;
            re += m(0, t) * std::cos(w);
            im -= m(0, t) * std::sin(w);
        }
        return std::hypot(re, im);
    };
    return 20.0 * std::log10(std::max(amplitude(y), 1e-300) / amplitude(x));
}

Verdict preprocessing() {
    double notch = -1e9, pass_worst = 0.0;
    for (std::size_t n : {500u, 1000u, 2000u}) {
        notch = std::max(notch, tone_gain_db(50.0, n, [](const Matrix& x) { return notch_filter(x, 1000.0, 49, 51); }));
        pass_worst = std::max(
            pass_worst, std::abs(tone_gain_db(40.0, n, [](const Matrix& x) { return bandpass_filter(x, 1000.0, 14, 72); })));
    }
    const Matrix clip = clip_interval(Matrix(16, 500, 1.0), 1000.0, 320.0, 480.0);
    const bool ok = notch <= -40.0 && pass_worst <= 1.0 && clip.cols() == 160 && clip.rows() == 16;
    return {ok, fmt("50 Hz through notch %.1f dB (need <= -40); 40 Hz through band-pass |%.2e| dB (need <= 1); "
                    "clip width %zu",
                    notch, pass_worst, clip.cols())};
}

// ---- 8: file formats ----

std::uint64_t error_offset(const std::function<void()>& load, bool& named) {
    try {
        load();
    } catch (const FormatError& e) {
        named = named && std::string(e.what()).find("offset " + std::to_string(e.offset())) != std::string::npos;
        return e.offset();
    } catch (...) {
    }
    named = false;
    return ~0ull;
}

Verdict formats() {
    test::TempDir dir("accept_fmt");
    GeneratorConfig g;
    g.n_subjects = 2;
    g.n_classes = 3;
    g.channels = 4;
    g.raw_timesteps = 50;
    g.samples_per_class_per_subject = 2;
    const auto data = generate_dataset(g);
    save_dataset(data, dir / "d.eegs");
    const bool data_rt = load_dataset(dir / "d.eegs") == data;
    const ModelParams params = init_params({4, 5, 6, 3}, 9);
    save_checkpoint(params, dir / "c.eegm");
    const bool ckpt_rt = load_checkpoint(dir / "c.eegm") == params;

    bool named = true;
    auto dataset_offset = [&](auto mutate) {
        auto b = read_bytes(dir / "d.eegs");
        mutate(b);
        write_bytes(dir / "x.eegs", b);
        return error_offset([&] { load_dataset(dir / "x.eegs"); }, named);
    };
    auto checkpoint_offset = [&](auto mutate) {
        auto b = read_bytes(dir / "c.eegm");
        mutate(b);
        write_bytes(dir / "x.eegm", b);
        return error_offset([&] { load_checkpoint(dir / "x.eegm"); }, named);
    };
    const std::size_t value3 = 32 + 4 + 3 * 8;
    // W_r holds 5 x 4 values starting at byte 21; cut inside the third.
    const std::size_t w_value2 = 21 + 2 * 8;
    const bool offsets =
        dataset_offset([](auto& b) { b[2] = '?'; }) == 0 && dataset_offset([](auto& b) { b[4] = 7; }) == 4 &&
        dataset_offset([&](auto& b) { b.resize(value3 + 3); }) == value3 &&
        checkpoint_offset([](auto& b) { b[0] = 'X'; }) == 0 && checkpoint_offset([](auto& b) { b[4] = 2; }) == 4 &&
        checkpoint_offset([&](auto& b) { b.resize(w_value2 + 5); }) == w_value2;
    return {data_rt && ckpt_rt && offsets && named,
            fmt("round trips: dataset %s, checkpoint %s; magic/version/truncation offsets %s; messages %s",
                data_rt ? "exact" : "DIFFER", ckpt_rt ? "exact" : "DIFFER", offsets ? "correct" : "WRONG",
                named ? "name the offset" : "MISSING offset")};
}

}  // namespace

int main() {
    const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
        {1, gradient_check}, {2, sampling_oracle}, {3, loss_oracles}, {4, batch_protocol},
        {5, trend_grid},     {6, cli_determinism}, {7, preprocessing}, {8, formats},
    };
    const char* only = std::getenv("ISC_ACCEPTANCE");
    std::set<int> wanted;
    if (only != nullptr) {
        std::stringstream ss(only);
        for (std::string tok; std::getline(ss, tok, ',');) wanted.insert(std::stoi(tok));
    }
    const std::map<int, double> limits = {{1, 10.0}, {2, 5.0}};
    const char* names[] = {"", "gradient check", "sampling oracle", "loss oracles", "batch protocol", "trend grid",
                           "determinism", "preprocessing", "file formats"};
    int failures = 0;
    for (const auto& [id, check] : criteria) {
        if (!wanted.empty() && !wanted.contains(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (auto it = limits.find(id); it != limits.end() && secs >= it->second) {
            v.pass = false;
            v.detail += fmt(" [runtime %.2fs exceeds %.0fs]", secs, it->second);
        }
        std::printf("criterion %d (%s): %s  %s  (%.2fs)\n", id, names[id], v.pass ? "PASS" : "FAIL", v.detail.c_str(),
                    secs);
        std::fflush(stdout);
        if (!v.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
