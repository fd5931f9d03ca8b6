#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "caqa/dataset.hpp"
#include "caqa/rng.hpp"
#include "caqa/tensor.hpp"

namespace caqa {

/// A stored instance from a finished task: its clip, score and origin.
struct Exemplar {
    FeatureClip clip;
    double score = 0.0;
    int source_task = 0;
};

// ---------------------------------------------------------------------------
// Exemplar sampling strategies. All return indices into the input ordering.
// ---------------------------------------------------------------------------

/// Score-stratified selection: sort by score, split into m near-equal
/// contiguous groups (remainder to the earliest groups), take the first
/// element of every group except the last, and the last element of the final
/// group. Guarantees the minimum of each leading group and the overall
/// maximum are covered.
inline std::vector<std::size_t> grouping_sample_indices(const std::vector<double>& scores,
                                                        std::size_t m) {
    const std::size_t n = scores.size();
    if (n == 0) throw std::invalid_argument("grouping_sample: empty dataset");
    if (m == 0 || m > n)
        throw std::invalid_argument("grouping_sample: m=" + std::to_string(m) +
                                    " outside [1, " + std::to_string(n) + "]");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<std::size_t> picked;
    picked.reserve(m);
    const std::size_t base = n / m, rem = n % m;
    std::size_t start = 0;
    for (std::size_t g = 0; g < m; ++g) {
        const std::size_t len = base + (g < rem ? 1 : 0);
        picked.push_back(g + 1 < m ? order[start] : order[start + len - 1]);
        start += len;
    }
    return picked;
}

/// Uniform selection without replacement, seed-deterministic.
inline std::vector<std::size_t> random_sample_indices(std::size_t n, std::size_t m, Rng& rng) {
    if (m > n)
        throw std::invalid_argument("random_sample: m=" + std::to_string(m) + " > n=" +
                                    std::to_string(n));
    return rng.sample_without_replacement(n, m);
}

/// Greedy herding: repeatedly add the item that keeps the running mean of
/// selected features closest to the full-set mean. Ties break on the lowest
/// index.
inline std::vector<std::size_t> herding_sample_indices(const std::vector<Tensor>& features,
                                                       std::size_t m) {
    const std::size_t n = features.size();
    if (m > n || n == 0)
        throw std::invalid_argument("herding_sample: m=" + std::to_string(m) + " of " +
                                    std::to_string(n) + " items");
    const std::size_t dim = features[0].size();
    std::vector<double> mean(dim, 0.0);
    for (const Tensor& f : features) {
        if (f.size() != dim) throw std::invalid_argument("herding_sample: ragged features");
        for (std::size_t d = 0; d < dim; ++d) mean[d] += f[d];
    }
    for (double& v : mean) v /= static_cast<double>(n);

    std::vector<std::size_t> picked;
    std::vector<char> used(n, 0);
    std::vector<double> sum(dim, 0.0);
    for (std::size_t k = 1; picked.size() < m; ++k) {
        std::size_t best = n;
        double best_dist = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            double dist = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = mean[d] - (sum[d] + features[i][d]) / static_cast<double>(k);
                dist += diff * diff;
            }
            if (best == n || dist < best_dist) {
                best = i;
                best_dist = dist;
            }
        }
        used[best] = 1;
        picked.push_back(best);
        for (std::size_t d = 0; d < dim; ++d) sum[d] += features[best][d];
    }
    return picked;
}

enum class SamplerKind : std::uint8_t { Grouping, Random, Herding };

inline const char* sampler_name(SamplerKind k) {
    switch (k) {
        case SamplerKind::Grouping: return "grouping";
        case SamplerKind::Random: return "random";
        case SamplerKind::Herding: return "herding";
    }
    return "?";
}

/// Extras a sampler may need: a seeded stream for random selection, a feature
/// extractor for herding.
struct SamplerContext {
    SamplerKind kind = SamplerKind::Grouping;
    Rng* rng = nullptr;
    std::function<Tensor(const FeatureClip&)> feature_of;
};

inline std::vector<std::size_t> sample_indices(const std::vector<const FeatureClip*>& items,
                                               std::size_t m, const SamplerContext& ctx) {
    switch (ctx.kind) {
        case SamplerKind::Grouping: {
            std::vector<double> scores;
            scores.reserve(items.size());
            for (const FeatureClip* c : items) scores.push_back(c->score);
            return grouping_sample_indices(scores, m);
        }
        case SamplerKind::Random:
            if (!ctx.rng) throw std::invalid_argument("sample_indices: random sampler needs an rng");
            return random_sample_indices(items.size(), m, *ctx.rng);
        case SamplerKind::Herding: {
            if (!ctx.feature_of)
                throw std::invalid_argument("sample_indices: herding needs a feature extractor");
            std::vector<Tensor> feats;
            feats.reserve(items.size());
            for (const FeatureClip* c : items) feats.push_back(ctx.feature_of(*c));
            return herding_sample_indices(feats, m);
        }
    }
    throw std::invalid_argument("sample_indices: unknown sampler");
}

// ---------------------------------------------------------------------------
// Bounded rehearsal memory.
// ---------------------------------------------------------------------------

/// Identifies one stored exemplar: task plus index in that task's
/// score-sorted list.
struct StoreRef {
    int task = 0;
    std::size_t index = 0;

    bool operator==(const StoreRef& o) const { return task == o.task && index == o.index; }
};

/// Per-task exemplar lists under a global capacity. Lists are kept sorted
/// ascending by score.
class ExemplarStore {
public:
    ExemplarStore() = default;
    explicit ExemplarStore(std::size_t capacity) : capacity_(capacity) {}

    std::size_t capacity() const { return capacity_; }
    void set_capacity(std::size_t c) { capacity_ = c; }

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& [task, list] : by_task_) n += list.size();
        return n;
    }
    std::size_t task_count() const { return by_task_.size(); }
    bool empty() const { return by_task_.empty(); }
    bool has_task(int task) const { return by_task_.count(task) != 0; }

    std::vector<int> tasks() const {
        std::vector<int> out;
        out.reserve(by_task_.size());
        for (const auto& [task, list] : by_task_) out.push_back(task);
        return out;
    }

    const std::vector<Exemplar>& list(int task) const {
        auto it = by_task_.find(task);
        if (it == by_task_.end())
            throw std::out_of_range("ExemplarStore: no exemplars for task " + std::to_string(task));
        return it->second;
    }

    const Exemplar& get(StoreRef ref) const { return list(ref.task).at(ref.index); }

    void set_task_list(int task, std::vector<Exemplar> exemplars) {
        std::stable_sort(exemplars.begin(), exemplars.end(),
                         [](const Exemplar& a, const Exemplar& b) { return a.score < b.score; });
        std::size_t others = 0;
        for (const auto& [t, l] : by_task_)
            if (t != task) others += l.size();
        if (others + exemplars.size() > capacity_)
            throw std::invalid_argument("ExemplarStore: " +
                                        std::to_string(others + exemplars.size()) +
                                        " exemplars exceed capacity " + std::to_string(capacity_));
        by_task_[task] = std::move(exemplars);
    }

    /// All stored exemplars in (task, index) order.
    std::vector<StoreRef> flatten() const {
        std::vector<StoreRef> out;
        out.reserve(total());
        for (const auto& [task, l] : by_task_)
            for (std::size_t i = 0; i < l.size(); ++i) out.push_back(StoreRef{task, i});
        return out;
    }

    /// All stored exemplars sorted by score (ties by task then index).
    std::vector<StoreRef> score_sorted() const {
        std::vector<StoreRef> refs = flatten();
        std::stable_sort(refs.begin(), refs.end(), [this](StoreRef a, StoreRef b) {
            return get(a).score < get(b).score;
        });
        return refs;
    }

    StoreRef sample_uniform(Rng& rng) const {
        std::vector<StoreRef> refs = flatten();
        if (refs.empty()) throw std::out_of_range("ExemplarStore: sampling from empty memory");
        return refs[rng.below(refs.size())];
    }

private:
    std::map<int, std::vector<Exemplar>> by_task_;
    std::size_t capacity_ = 0;
};

/// End-of-task memory update: with t tasks stored the per-task quota is
/// floor(M / t); existing lists are shrunk by re-running the sampler over
/// their own members, and the finished task contributes a fresh selection
/// from its training set.
inline void rebalance_memory(ExemplarStore& store, const TaskDataset& finished_task,
                             const SamplerContext& ctx) {
    if (store.has_task(finished_task.task_id))
        throw std::invalid_argument("rebalance_memory: task " +
                                    std::to_string(finished_task.task_id) + " already stored");
    if (finished_task.train.empty())
        throw std::invalid_argument("rebalance_memory: finished task has no training data");
    const std::size_t t = store.task_count() + 1;
    if (store.capacity() < t)
        throw std::invalid_argument("rebalance_memory: capacity " +
                                    std::to_string(store.capacity()) + " below task count " +
                                    std::to_string(t));
    const std::size_t quota = store.capacity() / t;

    for (int task : store.tasks()) {
        const std::vector<Exemplar>& old_list = store.list(task);
        if (old_list.size() <= quota) continue;
        std::vector<const FeatureClip*> items;
        items.reserve(old_list.size());
        for (const Exemplar& e : old_list) items.push_back(&e.clip);
        std::vector<Exemplar> kept;
        kept.reserve(quota);
        for (std::size_t idx : sample_indices(items, quota, ctx)) kept.push_back(old_list[idx]);
        store.set_task_list(task, std::move(kept));
    }

    std::vector<const FeatureClip*> items;
    items.reserve(finished_task.train.size());
    for (const FeatureClip& c : finished_task.train) items.push_back(&c);
    const std::size_t take = std::min(quota, items.size());
    std::vector<Exemplar> fresh;
    fresh.reserve(take);
    for (std::size_t idx : sample_indices(items, take, ctx))
        fresh.push_back(Exemplar{finished_task.train[idx], finished_task.train[idx].score,
                                 finished_task.task_id});
    store.set_task_list(finished_task.task_id, std::move(fresh));
}

// ---------------------------------------------------------------------------
// Augmentation helpers and feature-score co-augmentation.
// ---------------------------------------------------------------------------

/// K feature-score pairs guiding one augmentation.
struct HelperSet {
    std::vector<Tensor> features;
    std::vector<double> scores;

    std::size_t size() const { return features.size(); }
};

/// Uniform helper choice over the whole memory, excluding the exemplar being
/// augmented.
inline std::vector<StoreRef> select_helpers_random(const ExemplarStore& store, std::size_t k,
                                                   Rng& rng,
                                                   std::optional<StoreRef> exclude = {}) {
    if (k == 0) throw std::invalid_argument("select_helpers_random: k must be positive");
    std::vector<StoreRef> pool = store.flatten();
    if (exclude)
        pool.erase(std::remove(pool.begin(), pool.end(), *exclude), pool.end());
    if (pool.size() < k)
        throw std::invalid_argument("select_helpers_random: " + std::to_string(pool.size()) +
                                    " candidates for k=" + std::to_string(k));
    std::vector<StoreRef> out;
    out.reserve(k);
    for (std::size_t idx : rng.sample_without_replacement(pool.size(), k)) out.push_back(pool[idx]);
    return out;
}

/// Anchor-conditioned helper choice: split helpers below/above the anchor's
/// rank in the score-sorted memory so the low/high ratio tracks the anchor's
/// position, |low| ~= round(K * (i-1)/(M-1)), clamped to what each side holds.
inline std::vector<StoreRef> select_helpers_anchor(const ExemplarStore& store, std::size_t k,
                                                   StoreRef anchor, Rng& rng) {
    if (k == 0) throw std::invalid_argument("select_helpers_anchor: k must be positive");
    std::vector<StoreRef> sorted = store.score_sorted();
    const std::size_t m = sorted.size();
    if (m < k + 1)
        throw std::invalid_argument("select_helpers_anchor: store of " + std::to_string(m) +
                                    " cannot fill k=" + std::to_string(k) + " helpers");
    auto pos = std::find(sorted.begin(), sorted.end(), anchor);
    if (pos == sorted.end())
        throw std::invalid_argument("select_helpers_anchor: anchor not in store");
    const std::size_t i = static_cast<std::size_t>(pos - sorted.begin()) + 1;  // 1-based rank

    const std::size_t below = i - 1, above = m - i;
    std::size_t low_n =
        m > 1 ? static_cast<std::size_t>(std::llround(static_cast<double>(k) *
                                                      static_cast<double>(i - 1) /
                                                      static_cast<double>(m - 1)))
              : 0;
    low_n = std::min(low_n, below);
    if (k - low_n > above) low_n = k - above;  // feasible since below + above >= k
    const std::size_t high_n = k - low_n;

    std::vector<StoreRef> out;
    out.reserve(k);
    for (std::size_t idx : rng.sample_without_replacement(below, low_n)) out.push_back(sorted[idx]);
    for (std::size_t idx : rng.sample_without_replacement(above, high_n))
        out.push_back(sorted[i + idx]);
    return out;
}

struct Augmented {
    Tensor feature;
    double score = 0.0;
    double epsilon = 0.0;
};

/// Core of the co-augmentation with the perturbation size fixed: one shared
/// epsilon moves the feature toward (or past) the helper mean and the score by
/// the matching amount, preserving any affine feature-score relation exactly.
inline Augmented fs_augment_with_epsilon(const Tensor& feature, double score,
                                         const HelperSet& helpers, double epsilon) {
    if (helpers.size() == 0) throw std::invalid_argument("fs_augment: no helpers");
    Tensor delta(feature.shape());
    for (const Tensor& h : helpers.features) {
        if (!h.same_shape(feature))
            throw std::invalid_argument("fs_augment: helper shape " + shape_str(h.shape()) +
                                        " vs feature " + shape_str(feature.shape()));
        for (std::size_t d = 0; d < delta.size(); ++d) delta[d] += h[d];
    }
    const double inv = 1.0 / static_cast<double>(helpers.size());
    double delta_s = 0.0;
    for (double s : helpers.scores) delta_s += s;
    delta_s = delta_s * inv - score;

    Augmented out;
    out.feature = feature;
    for (std::size_t d = 0; d < delta.size(); ++d)
        out.feature[d] += epsilon * (delta[d] * inv - feature[d]);
    out.score = score + epsilon * delta_s;
    out.epsilon = epsilon;
    return out;
}

/// Draws epsilon ~ N(0, sigma) and applies the same value to feature and
/// score (optionally clipped to |epsilon| <= clip).
inline Augmented fs_augment(const Tensor& feature, double score, const HelperSet& helpers,
                            double sigma, Rng& rng, std::optional<double> clip = {}) {
    if (sigma < 0.0) throw std::invalid_argument("fs_augment: sigma must be non-negative");
    double eps = sigma == 0.0 ? 0.0 : rng.normal(0.0, sigma);
    if (clip) eps = std::clamp(eps, -*clip, *clip);
    return fs_augment_with_epsilon(feature, score, helpers, eps);
}

}  // namespace caqa
