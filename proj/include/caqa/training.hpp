#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "caqa/dataset.hpp"
#include "caqa/metrics.hpp"
#include "caqa/model.hpp"
#include "caqa/optimizer.hpp"
#include "caqa/rehearsal.hpp"

namespace caqa {

// ---------------------------------------------------------------------------
// Loss terms.
// ---------------------------------------------------------------------------

inline double aqa_loss(double predicted, double target) {
    const double d = predicted - target;
    return d * d;
}

/// Naive distillation: squared L2 drift of a clip's latent feature between the
/// current and the previous extractor, own task graph only.
inline double naive_distill_loss(const Tensor& f_current, const Tensor& f_previous) {
    if (!f_current.same_shape(f_previous))
        throw std::invalid_argument("naive_distill_loss: latent shapes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < f_current.size(); ++i) {
        const double d = f_current[i] - f_previous[i];
        s += d * d;
    }
    return s;
}

/// Graph-conditioned distillation: drift summed over every previous task's
/// graphs, current extractor against the frozen snapshot.
inline double feature_distill_loss(const ModelState& current, const ModelState& snapshot,
                                   const FeatureClip& clip, const std::vector<int>& prev_tasks) {
    if (prev_tasks.empty())
        throw std::invalid_argument("feature_distill_loss: undefined at the base step");
    double total = 0.0;
    for (int g : prev_tasks)
        total += naive_distill_loss(extract_features(current, clip, g),
                                    extract_features(snapshot, clip, g));
    return total;
}

/// Training objective: AQA regression plus, after the base step, weighted
/// distillation and difference terms.
inline double total_loss(double l_aqa, double l_fd, double l_diff, double lambda_fd,
                         double lambda_diff, bool base_step) {
    if (lambda_fd < 0.0 || lambda_diff < 0.0)
        throw std::invalid_argument("total_loss: negative loss weight");
    if (base_step) return l_aqa;
    return l_aqa + lambda_fd * l_fd + lambda_diff * l_diff;
}

// ---------------------------------------------------------------------------
// Continual trainer.
// ---------------------------------------------------------------------------

enum class Variant : std::uint8_t { Finetune, NaiveFd, GroupSampling, GroupSamplingDiff, Full };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Finetune: return "finetune";
        case Variant::NaiveFd: return "naive_fd";
        case Variant::GroupSampling: return "gs";
        case Variant::GroupSamplingDiff: return "gs_diff";
        case Variant::Full: return "full";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "finetune") return Variant::Finetune;
    if (s == "naive_fd") return Variant::NaiveFd;
    if (s == "gs") return Variant::GroupSampling;
    if (s == "gs_diff") return Variant::GroupSamplingDiff;
    if (s == "full") return Variant::Full;
    throw std::invalid_argument("unknown variant '" + s + "'");
}

struct TrainerOptions {
    double lambda_fd = 1.0;
    double lambda_diff = 1.0;
    std::size_t batch = 8;
    std::size_t iterations = 200;
    std::size_t helpers = 7;  // K
    double sigma = 0.3;
    std::optional<double> epsilon_clip;
    std::size_t memory = 30;  // M
    bool use_memory = true;
    bool use_diff = true;
    SamplerKind sampler = SamplerKind::Grouping;
    bool anchor_helpers = false;
    AdamConfig adam;
    LearningRates rates;

    void validate() const {
        if (lambda_fd < 0.0 || lambda_diff < 0.0)
            throw std::invalid_argument("TrainerOptions: negative loss weight");
        if (batch == 0 || iterations == 0)
            throw std::invalid_argument("TrainerOptions: batch and iterations must be positive");
        if (use_diff && helpers == 0)
            throw std::invalid_argument("TrainerOptions: difference loss needs helpers");
        if (use_diff && !use_memory)
            throw std::invalid_argument("TrainerOptions: difference loss needs the rehearsal memory");
        if (sigma < 0.0) throw std::invalid_argument("TrainerOptions: negative sigma");
        if (use_memory && memory == 0)
            throw std::invalid_argument("TrainerOptions: rehearsal needs a positive memory size");
        if (rates.graph <= 0.0 || rates.other <= 0.0)
            throw std::invalid_argument("TrainerOptions: learning rates must be positive");
    }
};

/// Maps an ablation variant onto trainer flags and the graph configuration.
/// The stack grows row by row: plain finetuning; naive distillation; plus
/// rehearsal memory; plus co-augmentation and the difference loss; plus
/// general/specific graphs with graph-conditioned distillation.
inline void apply_variant(Variant v, TrainerOptions& opts, ModelConfig& model_cfg) {
    switch (v) {
        case Variant::Finetune:
            opts.lambda_fd = 0.0;
            opts.lambda_diff = 0.0;
            opts.use_memory = false;
            opts.use_diff = false;
            model_cfg.use_specific_graphs = false;
            break;
        case Variant::NaiveFd:
            opts.lambda_diff = 0.0;
            opts.use_memory = false;
            opts.use_diff = false;
            model_cfg.use_specific_graphs = false;
            break;
        case Variant::GroupSampling:
            opts.lambda_diff = 0.0;
            opts.use_memory = true;
            opts.use_diff = false;
            opts.sampler = SamplerKind::Grouping;
            model_cfg.use_specific_graphs = false;
            break;
        case Variant::GroupSamplingDiff:
            opts.use_memory = true;
            opts.use_diff = true;
            opts.sampler = SamplerKind::Grouping;
            model_cfg.use_specific_graphs = false;
            break;
        case Variant::Full:
            opts.use_memory = true;
            opts.use_diff = true;
            opts.sampler = SamplerKind::Grouping;
            model_cfg.use_specific_graphs = true;
            break;
    }
}

struct IterationRecord {
    std::size_t iteration = 0;
    double aqa = 0.0;
    double fd = 0.0;
    double diff = 0.0;
    double total = 0.0;
};

/// What one iteration sampled, for replaying losses independently in tests.
struct IterationTrace {
    std::vector<std::size_t> current_items;
    std::vector<std::optional<StoreRef>> exemplars;
    std::vector<std::vector<StoreRef>> helpers;
    std::vector<double> epsilons;
};

class ContinualTrainer {
public:
    ContinualTrainer(const ModelConfig& model_cfg, const TrainerOptions& opts,
                     std::uint64_t init_seed, std::uint64_t train_seed)
        : options_(opts), model_(model_cfg, init_seed), optimizer_(model_.params()),
          memory_(opts.memory), rng_(train_seed) {
        options_.validate();
    }

    using IterationHook = std::function<void(std::size_t, const ModelState&)>;

    /// One continual stage: snapshot, open the task's graphs, optimize the
    /// stage objective for the iteration budget, then fold the task into the
    /// rehearsal memory.
    std::vector<IterationRecord> train_task(const TaskDataset& task,
                                            const IterationHook& hook = {}) {
        if (task.train.empty())
            throw std::invalid_argument("train_task: task " + std::to_string(task.task_id) +
                                        " has no training data");
        const std::size_t stage = tasks_trained_ + 1;
        const bool base_step = stage == 1;
        const bool replay = options_.use_memory && !base_step;
        const bool distill = options_.lambda_fd > 0.0 && !base_step;
        const bool diff = options_.use_diff && !base_step;
        if ((replay || diff) && memory_.empty())
            throw std::invalid_argument("train_task: stage " + std::to_string(stage) +
                                        " needs a non-empty rehearsal memory");

        if (!base_step)
            snapshot_.emplace(model_);
        model_.set_stats(task.task_id, compute_stats(task));
        model_.init_task_graphs(task.task_id);
        optimizer_.ensure(model_.params());

        snapshot_cache_.clear();
        const std::vector<int> prev_tasks = previous_tasks(task.task_id);

        std::vector<IterationRecord> records;
        records.reserve(options_.iterations);
        for (std::size_t iter = 0; iter < options_.iterations; ++iter) {
            records.push_back(run_iteration(task, iter, prev_tasks, replay, distill, diff));
            if (hook) hook(iter, model_);
        }

        if (options_.use_memory) {
            SamplerContext ctx;
            ctx.kind = options_.sampler;
            ctx.rng = &rng_;
            ctx.feature_of = [this, &task](const FeatureClip& clip) {
                return extract_features(model_, clip, task.task_id);
            };
            rebalance_memory(memory_, task, ctx);
        }
        ++tasks_trained_;
        return records;
    }

    /// Metric on a task's test split, predictions de-standardized with the
    /// task's own stats.
    double evaluate(const TaskDataset& task, MetricKind kind) const {
        if (task.test.empty())
            throw std::invalid_argument("evaluate: task " + std::to_string(task.task_id) +
                                        " has no test data");
        std::vector<double> pred, truth;
        pred.reserve(task.test.size());
        truth.reserve(task.test.size());
        for (const FeatureClip& clip : task.test) {
            pred.push_back(predict_score_raw(model_, clip, task.task_id));
            truth.push_back(clip.score);
        }
        return kind == MetricKind::Srcc ? srcc(pred, truth) : pairwise_accuracy(pred, truth);
    }

    const ModelState& model() const { return model_; }
    ModelState& model() { return model_; }
    const std::optional<ModelState>& snapshot() const { return snapshot_; }
    const ExemplarStore& memory() const { return memory_; }
    ExemplarStore& memory() { return memory_; }
    AdamState& optimizer() { return optimizer_; }
    const TrainerOptions& options() const { return options_; }
    std::size_t tasks_trained() const { return tasks_trained_; }
    void set_tasks_trained(std::size_t n) { tasks_trained_ = n; }
    Rng& rng() { return rng_; }
    const IterationTrace& last_trace() const { return trace_; }

private:
    static ScoreStats compute_stats(const TaskDataset& task) {
        ScoreStats st;
        double sum = 0.0;
        for (const FeatureClip& c : task.train) sum += c.score;
        st.mean = sum / static_cast<double>(task.train.size());
        double var = 0.0;
        for (const FeatureClip& c : task.train) {
            const double d = c.score - st.mean;
            var += d * d;
        }
        var /= static_cast<double>(task.train.size());
        st.stddev = var > 1e-24 ? std::sqrt(var) : 1.0;
        return st;
    }

    std::vector<int> previous_tasks(int current) const {
        std::vector<int> out;
        for (int t : model_.seen_tasks())
            if (t != current) out.push_back(t);
        return out;
    }

    /// Snapshot features are constants during a stage; cache them per
    /// (clip, graph) pair.
    const Tensor& snapshot_feature(const FeatureClip& clip, int graph_task) {
        const auto key = std::make_pair(static_cast<const void*>(&clip), graph_task);
        auto it = snapshot_cache_.find(key);
        if (it == snapshot_cache_.end())
            it = snapshot_cache_
                     .emplace(key, extract_features(*snapshot_, clip, graph_task))
                     .first;
        return it->second;
    }

    IterationRecord run_iteration(const TaskDataset& task, std::size_t iter,
                                  const std::vector<int>& prev_tasks, bool replay, bool distill,
                                  bool diff) {
        Tape tape;
        ModelTapeView view(tape, model_);
        const ScoreStats& cur_stats = model_.stats_for(task.task_id);

        trace_ = IterationTrace{};
        std::vector<Var> aqa_terms, fd_terms, diff_terms;
        for (std::size_t n = 0; n < options_.batch; ++n) {
            const std::size_t idx = rng_.below(task.train.size());
            trace_.current_items.push_back(idx);
            const FeatureClip& item = task.train[idx];
            auto cv = view.bind_clip(item);
            Var f_cur = view.extract(cv, task.task_id);
            Var l_aqa = tape.squared_error(view.score(f_cur),
                                           tape.leaf_scalar(cur_stats.to_std(item.score)));

            std::optional<StoreRef> ex_ref;
            const Exemplar* ex = nullptr;
            std::optional<ModelTapeView::ClipVars> exv;
            Var f_pre_cur;  // previous item under the current model, own graph
            if (replay || diff) {
                ex_ref = memory_.sample_uniform(rng_);
                ex = &memory_.get(*ex_ref);
                exv = view.bind_clip(ex->clip);
                f_pre_cur = view.extract(*exv, ex->source_task);
            }
            trace_.exemplars.push_back(ex_ref);

            if (replay) {
                const double s_pre = model_.stats_for(ex->source_task).to_std(ex->score);
                Var l_pre = tape.squared_error(view.score(f_pre_cur), tape.leaf_scalar(s_pre));
                l_aqa = tape.scale(tape.add(l_aqa, l_pre), 0.5);
            }
            aqa_terms.push_back(l_aqa);

            if (distill) {
                Var fd_cur, fd_pre;
                if (model_.config().use_specific_graphs) {
                    for (int g : prev_tasks) {
                        Var c = tape.squared_error(view.extract(cv, g),
                                                   tape.leaf(snapshot_feature(item, g)));
                        fd_cur = fd_cur.valid() ? tape.add(fd_cur, c) : c;
                        if (ex) {
                            Var p = tape.squared_error(view.extract(*exv, g),
                                                       tape.leaf(snapshot_feature(ex->clip, g)));
                            fd_pre = fd_pre.valid() ? tape.add(fd_pre, p) : p;
                        }
                    }
                } else {
                    fd_cur = tape.squared_error(
                        f_cur, tape.leaf(snapshot_feature(item, task.task_id)));
                    if (ex)
                        fd_pre = tape.squared_error(
                            f_pre_cur, tape.leaf(snapshot_feature(ex->clip, ex->source_task)));
                }
                Var fd_item = fd_pre.valid() ? tape.scale(tape.add(fd_cur, fd_pre), 0.5) : fd_cur;
                fd_terms.push_back(fd_item);
            }

            if (diff) {
                std::vector<StoreRef> helper_refs =
                    options_.anchor_helpers
                        ? select_helpers_anchor(memory_, options_.helpers, *ex_ref, rng_)
                        : select_helpers_random(memory_, options_.helpers, rng_, ex_ref);
                trace_.helpers.push_back(helper_refs);
                HelperSet hs;
                for (StoreRef r : helper_refs) {
                    const Exemplar& h = memory_.get(r);
                    hs.features.push_back(snapshot_feature(h.clip, h.source_task));
                    hs.scores.push_back(model_.stats_for(h.source_task).to_std(h.score));
                }
                const double s_pre = model_.stats_for(ex->source_task).to_std(ex->score);
                Augmented aug = fs_augment(snapshot_feature(ex->clip, ex->source_task), s_pre, hs,
                                           options_.sigma, rng_, options_.epsilon_clip);
                trace_.epsilons.push_back(aug.epsilon);
                Var pair = tape.concat({tape.leaf(aug.feature), f_pre_cur}, 0);
                diff_terms.push_back(tape.squared_error(view.score_difference(pair),
                                                        tape.leaf_scalar(aug.score - s_pre)));
            }
        }

        Var l_aqa = tape.mean_scalars(aqa_terms);
        Var l_fd, l_diff;
        Var total = l_aqa;
        if (!fd_terms.empty()) {
            l_fd = tape.mean_scalars(fd_terms);
            total = tape.add(total, tape.scale(l_fd, options_.lambda_fd));
        }
        if (!diff_terms.empty()) {
            l_diff = tape.mean_scalars(diff_terms);
            total = tape.add(total, tape.scale(l_diff, options_.lambda_diff));
        }

        tape.backward(total);
        Grads grads;
        grads.by_param.reserve(model_.params().size());
        for (std::size_t i = 0; i < model_.params().size(); ++i)
            grads.by_param.push_back(tape.grad(view.bound().by_index(i)));
        optimizer_.update(model_.params(), grads, options_.rates, options_.adam);

        IterationRecord rec;
        rec.iteration = iter;
        rec.aqa = tape.scalar_val(l_aqa);
        rec.fd = l_fd.valid() ? tape.scalar_val(l_fd) : 0.0;
        rec.diff = l_diff.valid() ? tape.scalar_val(l_diff) : 0.0;
        rec.total = tape.scalar_val(total);
        return rec;
    }

    TrainerOptions options_;
    ModelState model_;
    AdamState optimizer_;
    std::optional<ModelState> snapshot_;
    ExemplarStore memory_;
    Rng rng_;
    std::size_t tasks_trained_ = 0;
    IterationTrace trace_;
    std::map<std::pair<const void*, int>, Tensor> snapshot_cache_;
};

}  // namespace caqa
