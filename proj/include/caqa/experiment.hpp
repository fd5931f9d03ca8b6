#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "caqa/checkpoint.hpp"
#include "caqa/config.hpp"
#include "caqa/metrics.hpp"
#include "caqa/synth.hpp"
#include "caqa/training.hpp"

namespace caqa {

struct SequenceOptions {
    std::string checkpoint_dir;  // when set, save a checkpoint after every stage
    std::string resume_from;     // when set, continue from this checkpoint
};

struct SequenceResult {
    std::uint64_t order_seed = 0;
    std::vector<std::size_t> order;  // task indices in training order
    PerformanceMatrix matrix;
    std::size_t first_stage = 0;  // stages before this were restored, not run
    std::vector<std::vector<IterationRecord>> stage_losses;

    struct Prediction {
        int task_id;
        double predicted;
        double truth;
    };
    std::vector<Prediction> predictions;  // final-stage test predictions
};

/// One continual run over one task order: train stage by stage, fill the
/// performance matrix row after each stage, optionally checkpointing each
/// stage boundary or resuming from one.
inline SequenceResult run_sequence(const RunConfig& config,
                                   const std::vector<TaskDataset>& datasets,
                                   std::uint64_t order_seed, const SequenceOptions& opts = {}) {
    SequenceResult res;
    res.order_seed = order_seed;
    res.order = order_permutation(datasets.size(), order_seed);
    const std::size_t stages = res.order.size();

    ContinualTrainer trainer(config.model_config(), config.trainer_options(), config.model_seed,
                             config.trainer_seed);
    res.matrix = PerformanceMatrix(stages, config.metric);
    if (!opts.resume_from.empty()) {
        Checkpoint ck = load_checkpoint_file(opts.resume_from, trainer);
        if (ck.config_hash != config.hash())
            throw SerializeError("run_sequence: checkpoint was written by config " +
                                 ck.config_hash + ", current config is " + config.hash());
        if (ck.matrix.stages() != stages)
            throw SerializeError("run_sequence: checkpoint stage count mismatch");
        res.matrix = ck.matrix;
        res.first_stage = ck.stages_done;
    }

    for (std::size_t stage = res.first_stage; stage < stages; ++stage) {
        res.stage_losses.push_back(trainer.train_task(datasets[res.order[stage]]));
        for (std::size_t j = 0; j <= stage; ++j)
            res.matrix.set(stage, j,
                           trainer.evaluate(datasets[res.order[j]], config.metric));
        if (!opts.checkpoint_dir.empty()) {
            const std::string path = opts.checkpoint_dir + "/checkpoint_stage_" +
                                     std::to_string(stage + 1) + ".bin";
            save_checkpoint_file(path, trainer, res.matrix, config.hash());
        }
    }

    for (std::size_t j = 0; j < stages; ++j) {
        const TaskDataset& task = datasets[res.order[j]];
        for (const FeatureClip& clip : task.test)
            res.predictions.push_back(SequenceResult::Prediction{
                task.task_id, predict_score_raw(trainer.model(), clip, task.task_id),
                clip.score});
    }
    return res;
}

struct ExperimentSummary {
    std::string config_hash;
    std::vector<SequenceResult> runs;
    double mean_ap = 0.0;
    double mean_nbt = 0.0;
    double mean_mf = 0.0;
};

namespace detail {

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

inline void write_losses_jsonl(const std::filesystem::path& path, const std::string& config_hash,
                               std::size_t stage, int task_id,
                               const std::vector<IterationRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    nlohmann::json head{{"config_hash", config_hash}, {"stage", stage}, {"task_id", task_id}};
    out << head.dump() << "\n";
    for (const IterationRecord& r : records) {
        nlohmann::json line{{"iteration", r.iteration},
                            {"aqa", r.aqa},
                            {"fd", r.fd},
                            {"diff", r.diff},
                            {"total", r.total}};
        out << line.dump() << "\n";
    }
}

inline void write_predictions_csv(const std::filesystem::path& path,
                                  const std::string& config_hash,
                                  const std::vector<SequenceResult::Prediction>& preds) {
    std::ostringstream os;
    os.precision(17);
    os << "# config_hash=" << config_hash << "\n";
    os << "task,predicted,truth\n";
    for (const auto& p : preds) os << p.task_id << "," << p.predicted << "," << p.truth << "\n";
    write_text_file(path, os.str());
}

}  // namespace detail

/// Runs every order seed (in parallel), writes per-order artifacts plus the
/// aggregate metrics.json and run manifest under out_dir.
inline ExperimentSummary run_experiment(const RunConfig& config, const std::string& out_dir,
                                        bool checkpoint_stages = false,
                                        const std::string& dataset_cache = "") {
    namespace fs = std::filesystem;
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    const std::string hash = config.hash();
    fs::create_directories(out_dir);

    const SuiteSpec suite = config.suite_spec();
    std::vector<TaskDataset> datasets;
    if (dataset_cache.empty()) {
        datasets = generate_suite_datasets(suite);
    } else {
        fs::create_directories(dataset_cache);
        for (const TaskSpec& t : suite.tasks)
            datasets.push_back(generate_task_cached(t, dataset_cache));
    }

    ExperimentSummary summary;
    summary.config_hash = hash;
    summary.runs.resize(config.order_seeds.size());

    std::vector<std::thread> workers;
    std::mutex err_mutex;
    std::string first_error;
    for (std::size_t i = 0; i < config.order_seeds.size(); ++i) {
        workers.emplace_back([&, i] {
            try {
                const std::uint64_t os_seed = config.order_seeds[i];
                const fs::path dir = fs::path(out_dir) / ("order_" + std::to_string(os_seed));
                fs::create_directories(dir);
                SequenceOptions sopts;
                if (checkpoint_stages) sopts.checkpoint_dir = dir.string();
                SequenceResult run = run_sequence(config, datasets, os_seed, sopts);

                detail::write_text_file(dir / "matrix.csv", run.matrix.to_csv(hash));
                for (std::size_t s = 0; s < run.stage_losses.size(); ++s) {
                    const std::size_t stage = run.first_stage + s;
                    detail::write_losses_jsonl(
                        dir / ("losses_stage_" + std::to_string(stage + 1) + ".jsonl"), hash,
                        stage + 1, datasets[run.order[stage]].task_id, run.stage_losses[s]);
                }
                detail::write_predictions_csv(dir / "predictions.csv", hash, run.predictions);
                summary.runs[i] = std::move(run);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (first_error.empty()) first_error = e.what();
            }
        });
    }
    for (auto& w : workers) w.join();
    if (!first_error.empty()) throw std::runtime_error(first_error);

    nlohmann::json orders = nlohmann::json::array();
    const bool multi_stage = suite.tasks.size() >= 2;
    for (const SequenceResult& run : summary.runs) {
        const double ap = run.matrix.average_performance();
        const double nbt = multi_stage ? run.matrix.negative_backward_transfer() : 0.0;
        const double mf = multi_stage ? run.matrix.maximum_forgetting() : 0.0;
        summary.mean_ap += ap;
        summary.mean_nbt += nbt;
        summary.mean_mf += mf;
        std::vector<int> order_ids;
        for (std::size_t idx : run.order) order_ids.push_back(datasets[idx].task_id);
        nlohmann::json entry{{"order_seed", run.order_seed}, {"order", order_ids}, {"ap", ap}};
        if (multi_stage) {
            entry["nbt"] = nbt;
            entry["mf"] = mf;
        }
        orders.push_back(entry);
    }
    const double n = static_cast<double>(summary.runs.size());
    summary.mean_ap /= n;
    summary.mean_nbt /= n;
    summary.mean_mf /= n;

    nlohmann::json metrics{{"config_hash", hash},
                           {"variant", variant_name(config.variant)},
                           {"metric", metric_name(config.metric)},
                           {"orders", orders},
                           {"mean", {{"ap", summary.mean_ap}}}};
    if (multi_stage) {
        metrics["mean"]["nbt"] = summary.mean_nbt;
        metrics["mean"]["mf"] = summary.mean_mf;
    }
    detail::write_text_file(fs::path(out_dir) / "metrics.json", metrics.dump(2) + "\n");

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    nlohmann::json manifest{{"config_hash", hash},
                            {"config", config.to_json()},
                            {"wall_seconds", wall}};
    detail::write_text_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
    return summary;
}

/// Reshapes a finished run's artifacts into plot-ready long-format tables:
/// per-stage performance curves and predicted-vs-truth scatter points.
inline void export_plot_data(const std::string& run_dir, const std::string& plot_dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(run_dir))
        throw std::invalid_argument("export_plot_data: no run directory at " + run_dir);
    std::vector<fs::path> order_dirs;
    for (const auto& entry : fs::directory_iterator(run_dir))
        if (entry.is_directory() && entry.path().filename().string().rfind("order_", 0) == 0)
            order_dirs.push_back(entry.path());
    if (order_dirs.empty())
        throw std::invalid_argument("export_plot_data: no order_* runs under " + run_dir);
    std::sort(order_dirs.begin(), order_dirs.end());

    fs::create_directories(plot_dir);
    std::string config_hash = "unknown";
    std::ostringstream curves, scatter;
    curves.precision(17);
    scatter.precision(17);
    std::ostringstream curves_body, scatter_body;
    curves_body.precision(17);
    scatter_body.precision(17);

    for (const fs::path& dir : order_dirs) {
        const std::string seed = dir.filename().string().substr(6);
        std::ifstream min(dir / "matrix.csv");
        if (!min) throw std::invalid_argument("export_plot_data: missing " + (dir / "matrix.csv").string());
        std::string line;
        std::vector<std::string> lines;
        while (std::getline(min, line)) {
            if (line.rfind("# config_hash=", 0) == 0) config_hash = line.substr(14);
            lines.push_back(line);
        }
        std::istringstream matrix_in;
        {
            std::string joined;
            for (const auto& l : lines) joined += l + "\n";
            matrix_in.str(joined);
        }
        PerformanceMatrix m = PerformanceMatrix::from_csv(matrix_in);
        for (std::size_t i = 0; i < m.stages(); ++i)
            for (std::size_t j = 0; j <= i; ++j)
                if (m.defined(i, j))
                    curves_body << seed << "," << (i + 1) << "," << (j + 1) << "," << m.at(i, j)
                                << "\n";

        std::ifstream pin(dir / "predictions.csv");
        if (!pin)
            throw std::invalid_argument("export_plot_data: missing " +
                                        (dir / "predictions.csv").string());
        while (std::getline(pin, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("task,", 0) == 0) continue;
            scatter_body << seed << "," << line << "\n";
        }
    }

    curves << "# config_hash=" << config_hash << "\n"
           << "order_seed,stage,task,value\n"
           << curves_body.str();
    scatter << "# config_hash=" << config_hash << "\n"
            << "order_seed,task,predicted,truth\n"
            << scatter_body.str();
    detail::write_text_file(fs::path(plot_dir) / "curves.csv", curves.str());
    detail::write_text_file(fs::path(plot_dir) / "scatter.csv", scatter.str());
}

}  // namespace caqa
