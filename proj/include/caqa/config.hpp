#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "caqa/model.hpp"
#include "caqa/serialize.hpp"
#include "caqa/synth.hpp"
#include "caqa/training.hpp"

namespace caqa {

inline SamplerKind sampler_from_name(const std::string& s) {
    if (s == "grouping") return SamplerKind::Grouping;
    if (s == "random") return SamplerKind::Random;
    if (s == "herding") return SamplerKind::Herding;
    throw std::invalid_argument("unknown sampler '" + s + "'");
}

/// Full experiment description. Every field has a default, and a loaded
/// config re-serializes with all defaults materialized so silent settings
/// always end up on disk.
struct RunConfig {
    // suite
    std::uint64_t suite_seed = 1;
    std::size_t n_tasks = 5;
    std::size_t t_steps = 8;
    std::size_t joints = 5;
    std::size_t feat_dim = 16;
    std::size_t n_train = 120;
    std::size_t n_test = 40;
    double noise = 0.05;
    double shared_weight = 0.4;
    double score_base = 10.0;
    double score_span = 10.0;
    std::vector<std::uint64_t> order_seeds{0, 1, 2, 3};

    // protocol
    Variant variant = Variant::Full;
    MetricKind metric = MetricKind::Srcc;
    std::uint64_t model_seed = 42;
    std::uint64_t trainer_seed = 43;

    // model
    std::size_t latent_dim = 64;
    std::size_t hidden_dim = 64;
    double alpha = 0.5;
    bool spatial_same_frame = false;

    // trainer
    TrainerOptions trainer;

    SuiteSpec suite_spec() const {
        SuiteSpec s;
        s.suite_seed = suite_seed;
        s.order_seeds = order_seeds;
        for (std::size_t k = 1; k <= n_tasks; ++k) {
            TaskSpec t;
            t.task_id = static_cast<int>(k);
            t.suite_seed = suite_seed;
            t.seed = Rng::mix(suite_seed, k);
            t.t_steps = t_steps;
            t.joints = joints;
            t.feat_dim = feat_dim;
            t.n_train = n_train;
            t.n_test = n_test;
            t.noise = noise;
            t.shared_weight = shared_weight;
            t.score_min = score_base * static_cast<double>(k);
            t.score_max = score_base * static_cast<double>(k) + score_span;
            s.tasks.push_back(t);
        }
        return s;
    }

    ModelConfig model_config() const {
        ModelConfig mc;
        mc.t_steps = t_steps;
        mc.joints = joints;
        mc.feat_dim = feat_dim;
        mc.latent_dim = latent_dim;
        mc.hidden_dim = hidden_dim;
        mc.alpha = alpha;
        mc.spatial_same_frame = spatial_same_frame;
        TrainerOptions opts = trainer;
        apply_variant(variant, opts, mc);
        return mc;
    }

    TrainerOptions trainer_options() const {
        TrainerOptions opts = trainer;
        ModelConfig mc;
        apply_variant(variant, opts, mc);
        return opts;
    }

    void validate() const {
        suite_spec().validate();
        trainer_options().validate();
        if (alpha < 0.0 || alpha > 1.0)
            throw std::invalid_argument("RunConfig: alpha outside [0, 1]");
        if (latent_dim == 0 || hidden_dim == 0)
            throw std::invalid_argument("RunConfig: zero model dimension");
        if (trainer.memory > 0 && trainer.memory / n_tasks == 0 && trainer.use_memory &&
            variant != Variant::Finetune && variant != Variant::NaiveFd)
            throw std::invalid_argument("RunConfig: memory smaller than the task count");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["suite"] = {{"seed", suite_seed},     {"tasks", n_tasks},
                      {"t_steps", t_steps},     {"joints", joints},
                      {"feat_dim", feat_dim},   {"n_train", n_train},
                      {"n_test", n_test},       {"noise", noise},
                      {"shared_weight", shared_weight},
                      {"score_base", score_base},
                      {"score_span", score_span},
                      {"order_seeds", order_seeds}};
        j["variant"] = variant_name(variant);
        j["metric"] = metric_name(metric);
        j["seeds"] = {{"model", model_seed}, {"trainer", trainer_seed}};
        j["model"] = {{"latent_dim", latent_dim},
                      {"hidden_dim", hidden_dim},
                      {"alpha", alpha},
                      {"spatial_same_frame", spatial_same_frame}};
        nlohmann::json t;
        t["lambda_fd"] = trainer.lambda_fd;
        t["lambda_diff"] = trainer.lambda_diff;
        t["batch"] = trainer.batch;
        t["iterations"] = trainer.iterations;
        t["helpers"] = trainer.helpers;
        t["sigma"] = trainer.sigma;
        if (trainer.epsilon_clip)
            t["epsilon_clip"] = *trainer.epsilon_clip;
        else
            t["epsilon_clip"] = nullptr;
        t["memory"] = trainer.memory;
        t["sampler"] = sampler_name(trainer.sampler);
        t["helper_selection"] = trainer.anchor_helpers ? "anchor" : "random";
        t["lr_graph"] = trainer.rates.graph;
        t["lr_other"] = trainer.rates.other;
        t["weight_decay"] = trainer.adam.weight_decay;
        j["trainer"] = t;
        return j;
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        if (j.contains("suite")) {
            const auto& s = j.at("suite");
            c.suite_seed = s.value("seed", c.suite_seed);
            c.n_tasks = s.value("tasks", c.n_tasks);
            c.t_steps = s.value("t_steps", c.t_steps);
            c.joints = s.value("joints", c.joints);
            c.feat_dim = s.value("feat_dim", c.feat_dim);
            c.n_train = s.value("n_train", c.n_train);
            c.n_test = s.value("n_test", c.n_test);
            c.noise = s.value("noise", c.noise);
            c.shared_weight = s.value("shared_weight", c.shared_weight);
            c.score_base = s.value("score_base", c.score_base);
            c.score_span = s.value("score_span", c.score_span);
            if (s.contains("order_seeds"))
                c.order_seeds = s.at("order_seeds").get<std::vector<std::uint64_t>>();
        }
        if (j.contains("variant")) c.variant = variant_from_name(j.at("variant").get<std::string>());
        if (j.contains("metric")) c.metric = metric_from_name(j.at("metric").get<std::string>());
        if (j.contains("seeds")) {
            c.model_seed = j.at("seeds").value("model", c.model_seed);
            c.trainer_seed = j.at("seeds").value("trainer", c.trainer_seed);
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            c.latent_dim = m.value("latent_dim", c.latent_dim);
            c.hidden_dim = m.value("hidden_dim", c.hidden_dim);
            c.alpha = m.value("alpha", c.alpha);
            c.spatial_same_frame = m.value("spatial_same_frame", c.spatial_same_frame);
        }
        if (j.contains("trainer")) {
            const auto& t = j.at("trainer");
            c.trainer.lambda_fd = t.value("lambda_fd", c.trainer.lambda_fd);
            c.trainer.lambda_diff = t.value("lambda_diff", c.trainer.lambda_diff);
            c.trainer.batch = t.value("batch", c.trainer.batch);
            c.trainer.iterations = t.value("iterations", c.trainer.iterations);
            c.trainer.helpers = t.value("helpers", c.trainer.helpers);
            c.trainer.sigma = t.value("sigma", c.trainer.sigma);
            if (t.contains("epsilon_clip") && !t.at("epsilon_clip").is_null())
                c.trainer.epsilon_clip = t.at("epsilon_clip").get<double>();
            c.trainer.memory = t.value("memory", c.trainer.memory);
            if (t.contains("sampler"))
                c.trainer.sampler = sampler_from_name(t.at("sampler").get<std::string>());
            if (t.contains("helper_selection"))
                c.trainer.anchor_helpers = t.at("helper_selection").get<std::string>() == "anchor";
            c.trainer.rates.graph = t.value("lr_graph", c.trainer.rates.graph);
            c.trainer.rates.other = t.value("lr_other", c.trainer.rates.other);
            c.trainer.adam.weight_decay = t.value("weight_decay", c.trainer.adam.weight_decay);
        }
        return c;
    }

    static RunConfig load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::invalid_argument("RunConfig: cannot open '" + path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("RunConfig: malformed JSON in '" + path + "': " + e.what());
        }
        RunConfig c = from_json(j);
        c.validate();
        return c;
    }

    /// Hash of the fully materialized config; stamped into every output file.
    std::string hash() const { return fnv1a_hex(to_json().dump()); }
};

}  // namespace caqa
