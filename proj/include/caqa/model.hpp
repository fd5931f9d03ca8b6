#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "caqa/dataset.hpp"
#include "caqa/extractor.hpp"
#include "caqa/params.hpp"
#include "caqa/rng.hpp"

namespace caqa {

struct ModelConfig {
    std::size_t t_steps = 8;
    std::size_t joints = 5;
    std::size_t feat_dim = 16;
    std::size_t latent_dim = 64;  // extractor output D_f, fixed across tasks
    std::size_t hidden_dim = 64;  // regressor hidden width
    double alpha = 0.5;
    bool use_specific_graphs = true;  // false = one shared graph for all tasks
    bool spatial_same_frame = false;

    std::size_t concat_width() const { return feat_dim + 4 * joints * feat_dim; }
};

/// Per-task score standardization (regression targets are z-scores; metric
/// computation de-standardizes, which rank metrics ignore anyway).
struct ScoreStats {
    double mean = 0.0;
    double stddev = 1.0;

    double to_std(double raw) const { return (raw - mean) / stddev; }
    double to_raw(double z) const { return mean + stddev * z; }
};

namespace names {
inline const std::string general_spatial = "graph.general_s";
inline const std::string general_temporal = "graph.general_r";
inline const std::string neighbor_weights = "graph.w";
inline std::string specific_spatial(int task) { return "graph.spec_s." + std::to_string(task); }
inline std::string specific_temporal(int task) { return "graph.spec_r." + std::to_string(task); }
}  // namespace names

/// Extractor head, score regressor, difference regressor and all joint graphs,
/// stored as one ParamSet so the optimizer and checkpoints see a flat list.
class ModelState {
public:
    ModelState() = default;

    ModelState(const ModelConfig& cfg, std::uint64_t init_seed) : config_(cfg) {
        Rng rng(init_seed);
        const std::size_t J = cfg.joints;
        params_.add(names::general_spatial, graph_init(rng, J), ParamGroup::Graph);
        params_.add(names::general_temporal, graph_init(rng, J), ParamGroup::Graph);
        params_.add(names::neighbor_weights, Tensor::filled({J}, 1.0), ParamGroup::Other);
        add_linear(rng, "head", cfg.latent_dim, cfg.concat_width());
        add_linear(rng, "score_reg.l1", cfg.hidden_dim, cfg.latent_dim);
        add_linear(rng, "score_reg.l2", 1, cfg.hidden_dim);
        add_linear(rng, "diff_reg.l1", cfg.hidden_dim, 2 * cfg.latent_dim);
        add_linear(rng, "diff_reg.l2", 1, cfg.hidden_dim);
    }

    const ModelConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    const std::vector<int>& graph_tasks() const { return graph_tasks_; }
    bool has_task_graph(int task) const {
        return std::find(graph_tasks_.begin(), graph_tasks_.end(), task) != graph_tasks_.end();
    }

    /// Registers the task-specific graphs for a new task. At the base step the
    /// specific graph copies the general one so the blended graph equals the
    /// shared initialization; afterwards it copies the most recent task's.
    void init_task_graphs(int task) {
        if (!config_.use_specific_graphs) {
            if (std::find(seen_tasks_.begin(), seen_tasks_.end(), task) == seen_tasks_.end())
                seen_tasks_.push_back(task);
            return;
        }
        if (has_task_graph(task))
            throw std::invalid_argument("init_task_graphs: task " + std::to_string(task) +
                                        " already has specific graphs");
        const bool base_step = graph_tasks_.empty();
        Tensor spatial, temporal;
        if (base_step) {
            spatial = params_.at(names::general_spatial);
            temporal = params_.at(names::general_temporal);
        } else {
            const int prev = graph_tasks_.back();
            spatial = params_.at(names::specific_spatial(prev));
            temporal = params_.at(names::specific_temporal(prev));
        }
        params_.add(names::specific_spatial(task), std::move(spatial), ParamGroup::Graph);
        params_.add(names::specific_temporal(task), std::move(temporal), ParamGroup::Graph);
        graph_tasks_.push_back(task);
        seen_tasks_.push_back(task);
    }

    // checkpoint restore hooks
    void replace_params(ParamSet ps) { params_ = std::move(ps); }
    void replace_task_registry(std::vector<int> graph_tasks, std::vector<int> seen_tasks) {
        graph_tasks_ = std::move(graph_tasks);
        seen_tasks_ = std::move(seen_tasks);
    }

    const std::vector<int>& seen_tasks() const { return seen_tasks_; }

    ScoreStats& stats_for(int task) { return score_stats_[task]; }
    const ScoreStats& stats_for(int task) const {
        auto it = score_stats_.find(task);
        if (it == score_stats_.end())
            throw std::out_of_range("ModelState: no score stats for task " + std::to_string(task));
        return it->second;
    }
    const std::map<int, ScoreStats>& all_stats() const { return score_stats_; }
    void set_stats(int task, ScoreStats s) { score_stats_[task] = s; }

    std::uint64_t param_checksum() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix_bytes = [&h](const void* p, std::size_t n) {
            const unsigned char* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
        };
        for (const auto& e : params_) {
            mix_bytes(e.name.data(), e.name.size());
            mix_bytes(e.value.values().data(), e.value.size() * sizeof(double));
        }
        return h;
    }

private:
    Tensor graph_init(Rng& rng, std::size_t J) {
        Tensor g({J, J});
        const double lim = 1.0 / static_cast<double>(J);
        for (double& v : g.values()) v = rng.uniform(-lim, lim);
        return g;
    }

    void add_linear(Rng& rng, const std::string& prefix, std::size_t out_dim, std::size_t in_dim) {
        Tensor w({out_dim, in_dim});
        const double lim = 1.0 / std::sqrt(static_cast<double>(in_dim));
        for (double& v : w.values()) v = rng.uniform(-lim, lim);
        params_.add(prefix + ".weight", std::move(w), ParamGroup::Other);
        params_.add(prefix + ".bias", Tensor(Shape{out_dim}), ParamGroup::Other);
    }

    ModelConfig config_;
    ParamSet params_;
    std::vector<int> graph_tasks_;  // tasks with specific graphs, in arrival order
    std::vector<int> seen_tasks_;   // all trained tasks, in arrival order
    std::map<int, ScoreStats> score_stats_;
};

/// One model bound onto one tape: parameters become leaves once, task graphs
/// are blended lazily, and extraction/regression nodes share them.
class ModelTapeView {
public:
    ModelTapeView(Tape& tape, const ModelState& model)
        : tape_(&tape), model_(&model), owned_(std::in_place, tape, model.params()),
          bound_(&*owned_) {}

    /// View over externally bound parameters (same names/layout as the
    /// model's ParamSet). Used where the parameter values are supplied by a
    /// driver, e.g. the finite-difference oracle.
    ModelTapeView(Tape& tape, const ModelState& model, const BoundParams& bound)
        : tape_(&tape), model_(&model), bound_(&bound) {}

    struct ClipVars {
        Var whole_scene;
        Var patches;
    };

    ClipVars bind_clip(const FeatureClip& clip) {
        return ClipVars{tape_->leaf(clip.whole_scene), tape_->leaf(clip.patches)};
    }

    GraphNodes task_graphs(int task) {
        auto it = graph_cache_.find(task);
        if (it != graph_cache_.end()) return it->second;
        const ModelConfig& cfg = model_->config();
        GraphNodes g;
        const BoundParams& b = *bound_;
        g.weights = b[names::neighbor_weights];
        if (cfg.use_specific_graphs) {
            if (!model_->has_task_graph(task))
                throw std::out_of_range("task_graphs: no specific graphs for task " +
                                        std::to_string(task));
            g.spatial = combine_graph(*tape_, b[names::general_spatial],
                                      b[names::specific_spatial(task)], cfg.alpha);
            g.temporal = combine_graph(*tape_, b[names::general_temporal],
                                       b[names::specific_temporal(task)], cfg.alpha);
        } else {
            g.spatial = b[names::general_spatial];
            g.temporal = b[names::general_temporal];
        }
        graph_cache_.emplace(task, g);
        return g;
    }

    /// Latent feature of a clip extracted with the given task's graphs.
    Var extract(const ClipVars& clip, int task) {
        const ModelConfig& cfg = model_->config();
        Var pooled = pooled_concat_features(*tape_, task_graphs(task), clip.whole_scene,
                                            clip.patches, cfg.spatial_same_frame);
        const BoundParams& b = *bound_;
        return tape_->relu(tape_->linear(b["head.weight"], pooled, b["head.bias"]));
    }

    Var extract(const FeatureClip& clip, int task) { return extract(bind_clip(clip), task); }

    /// Score regressor output (standardized units), rank-0.
    Var score(Var latent) { return regress("score_reg", latent); }

    /// Difference regressor over a concatenated feature pair, rank-0.
    Var score_difference(Var latent_pair) { return regress("diff_reg", latent_pair); }

    const BoundParams& bound() const { return *bound_; }

private:
    Var regress(const std::string& prefix, Var input) {
        const BoundParams& b = *bound_;
        Var h = tape_->relu(
            tape_->linear(b[prefix + ".l1.weight"], input, b[prefix + ".l1.bias"]));
        Var y = tape_->linear(b[prefix + ".l2.weight"], h, b[prefix + ".l2.bias"]);
        return tape_->reshape(y, Shape{});
    }

    Tape* tape_;
    const ModelState* model_;
    std::optional<BoundParams> owned_;
    const BoundParams* bound_;
    std::map<int, GraphNodes> graph_cache_;
};

/// Forward-only extraction on a scratch tape.
inline Tensor extract_features(const ModelState& model, const FeatureClip& clip, int task) {
    Tape tape;
    ModelTapeView view(tape, model);
    return tape.val(view.extract(clip, task));
}

/// Standardized score prediction for a clip under one task's graphs.
inline double predict_score_std(const ModelState& model, const FeatureClip& clip, int task) {
    Tape tape;
    ModelTapeView view(tape, model);
    return tape.scalar_val(view.score(view.extract(clip, task)));
}

inline double predict_score_raw(const ModelState& model, const FeatureClip& clip, int task) {
    return model.stats_for(task).to_raw(predict_score_std(model, clip, task));
}

}  // namespace caqa
