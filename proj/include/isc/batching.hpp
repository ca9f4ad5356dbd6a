#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "isc/random.hpp"
#include "isc/signals.hpp"

namespace isc {

struct KShotSpec {
    int target_subject = 0;
    std::size_t k = 1;
    std::uint64_t seed = 0;
};

/// Non-owning view of the training samples; the referenced datasets must outlive it.
struct TrainingPool {
    std::vector<const Sample*> samples;
    /// Subject holding the few-shot picks; -1 when every subject is a source.
    int target_subject = -1;

    /// Pool indices grouped by subject id (ascending), each in pool order.
    std::map<int, std::vector<std::size_t>> by_subject() const;
};

/// All source samples plus exactly k seeded picks per class from the target.
/// The picks for k are a prefix of the picks for k+1 under the same seed.
TrainingPool make_kshot_train_set(std::span<const SubjectDataset> source, const SubjectDataset& target_train,
                                  const KShotSpec& spec);

struct BatchEntry {
    const Sample* sample = nullptr;
    int subject_id = 0;
    int class_label = 0;
};

struct Batch {
    std::vector<BatchEntry> entries;
    std::size_t per_subject_quota = 0;

    std::vector<const Sample*> samples() const;
};

/// N entries for every subject in the pool. Subjects with at least N samples are
/// drawn without replacement; a subject with M < N samples contributes each sample
/// floor(N/M) times plus N mod M extra distinct samples. The batch is shuffled.
Batch sample_balanced_batch(const TrainingPool& pool, std::size_t per_subject, Rng& rng);

/// floor(size / N) of the smallest source subject, at least 1. The target
/// subject never sets the epoch length.
std::size_t steps_per_epoch(const TrainingPool& pool, std::size_t per_subject);

}  // namespace isc
