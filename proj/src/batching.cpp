#include "isc/batching.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "isc/errors.hpp"

namespace isc {

std::map<int, std::vector<std::size_t>> TrainingPool::by_subject() const {
    std::map<int, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < samples.size(); ++i) out[samples[i]->subject_id].push_back(i);
    return out;
}

TrainingPool make_kshot_train_set(std::span<const SubjectDataset> source, const SubjectDataset& target_train,
                                  const KShotSpec& spec) {
    if (spec.k < 1) throw ConfigError("k-shot: k must be >= 1");
    if (target_train.subject_id != spec.target_subject) {
        throw DataError("k-shot: target dataset belongs to subject " + std::to_string(target_train.subject_id) +
                        ", expected " + std::to_string(spec.target_subject));
    }
    target_train.validate();

    TrainingPool pool;
    pool.target_subject = spec.target_subject;
    std::set<int> classes;
    for (const auto& ds : source) {
        ds.validate();
        if (ds.subject_id == spec.target_subject) throw DataError("k-shot: target subject listed among sources");
        for (const auto& s : ds.samples) {
            pool.samples.push_back(&s);
            classes.insert(s.class_label);
        }
    }

    std::map<int, std::vector<std::size_t>> target_by_class;
    for (std::size_t i = 0; i < target_train.samples.size(); ++i) {
        target_by_class[target_train.samples[i].class_label].push_back(i);
        classes.insert(target_train.samples[i].class_label);
    }
    for (int c : classes) {
        auto& idx = target_by_class[c];
        if (idx.size() < spec.k) {
            throw DataError("k-shot: target subject " + std::to_string(spec.target_subject) + " has " +
                            std::to_string(idx.size()) + " samples of class " + std::to_string(c) + ", need " +
                            std::to_string(spec.k));
        }
        Rng rng = make_rng(spec.seed, {static_cast<std::uint64_t>(spec.target_subject), static_cast<std::uint64_t>(c)});
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = 0; i < spec.k; ++i) pool.samples.push_back(&target_train.samples[idx[i]]);
    }
    return pool;
}

std::vector<const Sample*> Batch::samples() const {
    std::vector<const Sample*> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.sample);
    return out;
}

Batch sample_balanced_batch(const TrainingPool& pool, std::size_t per_subject, Rng& rng) {
    if (per_subject < 1) throw ConfigError("batch: per-subject quota must be >= 1");
    const auto groups = pool.by_subject();
    if (groups.empty()) throw DataError("batch: training pool is empty");

    Batch batch;
    batch.per_subject_quota = per_subject;
    batch.entries.reserve(groups.size() * per_subject);
    auto emit = [&](std::size_t pool_index) {
        const Sample* s = pool.samples[pool_index];
        batch.entries.push_back({s, s->subject_id, s->class_label});
    };
    // First `count` entries of a partial Fisher-Yates shuffle.
    auto draw_distinct = [&](std::vector<std::size_t> idx, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
            emit(idx[i]);
        }
    };

    for (const auto& [subject, idx] : groups) {
        const std::size_t m = idx.size();
        if (m >= per_subject) {
            draw_distinct(idx, per_subject);
        } else {
            for (std::size_t rep = 0; rep < per_subject / m; ++rep)
                for (std::size_t i : idx) emit(i);
            draw_distinct(idx, per_subject % m);
        }
    }
    std::shuffle(batch.entries.begin(), batch.entries.end(), rng);
    return batch;
}

std::size_t steps_per_epoch(const TrainingPool& pool, std::size_t per_subject) {
    if (per_subject < 1) throw ConfigError("batch: per-subject quota must be >= 1");
    std::size_t smallest = 0;
    for (const auto& [subject, idx] : pool.by_subject()) {
        if (subject == pool.target_subject) continue;
        smallest = smallest == 0 ? idx.size() : std::min(smallest, idx.size());
    }
    return std::max<std::size_t>(smallest / per_subject, 1);
}

}  // namespace isc
