#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "caqa/checkpoint.hpp"
#include "caqa/config.hpp"
#include "caqa/experiment.hpp"

namespace fs = std::filesystem;
using namespace caqa;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::string resolve_out(const std::string& out) {
    if (out.empty() || fs::path(out).is_absolute()) return out;
    if (const char* root = std::getenv("CAQA_OUTPUT_ROOT"))
        return (fs::path(root) / out).string();
    return out;
}

nlohmann::json matrix_summary(const PerformanceMatrix& m) {
    nlohmann::json j;
    j["metric"] = metric_name(m.kind());
    j["stages"] = m.stages();
    j["ap"] = m.average_performance();
    if (m.stages() >= 2) {
        j["nbt"] = m.negative_backward_transfer();
        j["mf"] = m.maximum_forgetting();
    }
    return j;
}

PerformanceMatrix load_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open matrix file '" + path + "'");
    return PerformanceMatrix::from_csv(in);
}

int cmd_run(const std::string& config_path, const std::string& out,
            const std::string& variant_override, bool checkpoint_stages,
            const std::string& dataset_cache) {
    RunConfig config = RunConfig::load_file(config_path);
    if (!variant_override.empty()) {
        config.variant = variant_from_name(variant_override);
        config.validate();
    }
    ExperimentSummary s = run_experiment(config, resolve_out(out), checkpoint_stages,
                                         dataset_cache.empty() ? "" : resolve_out(dataset_cache));
    std::cout << "run " << s.config_hash << " variant=" << variant_name(config.variant)
              << " mean_ap=" << s.mean_ap << " mean_nbt=" << s.mean_nbt << "\n";
    return kExitOk;
}

int cmd_resume(const std::string& config_path, const std::string& run_dir) {
    RunConfig config = RunConfig::load_file(config_path);
    const std::string base = resolve_out(run_dir);
    const auto datasets = generate_suite_datasets(config.suite_spec());
    bool resumed_any = false;
    for (std::uint64_t os_seed : config.order_seeds) {
        const fs::path dir = fs::path(base) / ("order_" + std::to_string(os_seed));
        std::string latest;
        for (std::size_t stage = config.n_tasks; stage >= 1; --stage) {
            const fs::path p = dir / ("checkpoint_stage_" + std::to_string(stage) + ".bin");
            if (fs::exists(p)) {
                latest = p.string();
                break;
            }
        }
        if (latest.empty()) continue;
        SequenceOptions opts;
        opts.resume_from = latest;
        opts.checkpoint_dir = dir.string();
        SequenceResult run = run_sequence(config, datasets, os_seed, opts);
        std::ofstream(dir / "matrix.csv") << run.matrix.to_csv(config.hash());
        std::cout << "order " << os_seed << ": resumed at stage " << (run.first_stage + 1)
                  << ", ap=" << run.matrix.average_performance() << "\n";
        resumed_any = true;
    }
    if (!resumed_any) throw std::invalid_argument("no checkpoints found under " + base);
    return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& out,
               const std::string& dataset_cache) {
    RunConfig config = RunConfig::load_file(config_path);
    const std::string base = resolve_out(out);
    fs::create_directories(base);
    nlohmann::json variants;
    for (Variant v : {Variant::Finetune, Variant::NaiveFd, Variant::GroupSampling,
                      Variant::GroupSamplingDiff, Variant::Full}) {
        RunConfig c = config;
        c.variant = v;
        c.validate();
        ExperimentSummary s =
            run_experiment(c, (fs::path(base) / variant_name(v)).string(), false,
                           dataset_cache.empty() ? "" : resolve_out(dataset_cache));
        variants[variant_name(v)] = {{"config_hash", s.config_hash},
                                     {"ap", s.mean_ap},
                                     {"nbt", s.mean_nbt},
                                     {"mf", s.mean_mf}};
        std::cout << variant_name(v) << ": ap=" << s.mean_ap << " nbt=" << s.mean_nbt << "\n";
    }
    nlohmann::json report{{"base_config_hash", config.hash()}, {"variants", variants}};
    std::ofstream(fs::path(base) / "ablation.json") << report.dump(2) << "\n";
    return kExitOk;
}

int cmd_metrics(const std::vector<std::string>& matrix_files, const std::string& run_dir) {
    nlohmann::json out = nlohmann::json::array();
    if (!run_dir.empty()) {
        const std::string base = resolve_out(run_dir);
        if (!fs::exists(base)) throw std::invalid_argument("no run directory at " + base);
        for (const auto& entry : fs::directory_iterator(base)) {
            if (!entry.is_directory()) continue;
            const fs::path m = entry.path() / "matrix.csv";
            if (!fs::exists(m)) continue;
            nlohmann::json j = matrix_summary(load_matrix_csv(m.string()));
            j["source"] = m.string();
            out.push_back(j);
        }
        if (out.empty()) throw std::invalid_argument("no matrix.csv files under " + base);
    }
    for (const std::string& f : matrix_files) {
        nlohmann::json j = matrix_summary(load_matrix_csv(f));
        j["source"] = f;
        out.push_back(j);
    }
    if (out.empty()) throw std::invalid_argument("nothing to recompute: pass --run or files");
    std::cout << out.dump(2) << "\n";
    return kExitOk;
}

int cmd_checkpoint_info(const std::string& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open checkpoint '" + file + "'");
    BinReader r(in);
    if (r.u32() != kCheckpointMagic) throw std::invalid_argument("not a checkpoint file");
    const std::uint32_t version = r.u32();
    const std::string hash = r.str();
    std::cout << "version: " << version << "\n"
              << "config_hash: " << hash << "\n"
              << "t_steps: " << r.u64() << "\njoints: " << r.u64()
              << "\nfeat_dim: " << r.u64() << "\nlatent_dim: " << r.u64()
              << "\nhidden_dim: " << r.u64() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual score-regression benchmark: rehearsal with feature-score "
                 "co-augmentation and general/specific joint graphs"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "runs/out", variant_override, dataset_cache;
    std::string run_dir, plot_dir, ck_file;
    std::vector<std::string> matrix_files;
    bool checkpoint_stages = false;

    CLI::App* run = app.add_subcommand("run", "execute the continual protocol for one variant");
    run->add_option("--config", config_path, "config JSON path")->required();
    run->add_option("--out", out_dir, "output directory (relative to CAQA_OUTPUT_ROOT)");
    run->add_option("--variant", variant_override,
                    "override the config variant (finetune|naive_fd|gs|gs_diff|full)");
    run->add_flag("--checkpoint-stages", checkpoint_stages, "save a checkpoint after every stage");
    run->add_option("--dataset-cache", dataset_cache, "cache generated datasets here");

    CLI::App* resume = app.add_subcommand("resume", "continue runs from their latest checkpoints");
    resume->add_option("--config", config_path, "config JSON path")->required();
    resume->add_option("--run", run_dir, "run directory with order_*/checkpoint files")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "run every variant and summarize");
    ablate->add_option("--config", config_path, "config JSON path")->required();
    ablate->add_option("--out", out_dir, "output directory");
    ablate->add_option("--dataset-cache", dataset_cache, "cache generated datasets here");

    CLI::App* metrics = app.add_subcommand("metrics", "recompute summary metrics from matrices");
    metrics->add_option("--run", run_dir, "run directory to scan for matrix.csv files");
    metrics->add_option("files", matrix_files, "matrix.csv files");

    CLI::App* plots = app.add_subcommand("export-plots", "emit plot-ready CSV tables");
    plots->add_option("--run", run_dir, "run directory")->required();
    plots->add_option("--out", plot_dir, "plot output directory (default <run>/plots)");

    CLI::App* info = app.add_subcommand("checkpoint-info", "describe a checkpoint file");
    info->add_option("--file", ck_file, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*run) return cmd_run(config_path, out_dir, variant_override, checkpoint_stages,
                                 dataset_cache);
        if (*resume) return cmd_resume(config_path, run_dir);
        if (*ablate) return cmd_ablate(config_path, out_dir, dataset_cache);
        if (*metrics) return cmd_metrics(matrix_files, run_dir);
        if (*plots)
            return (export_plot_data(resolve_out(run_dir),
                                     plot_dir.empty()
                                         ? (fs::path(resolve_out(run_dir)) / "plots").string()
                                         : resolve_out(plot_dir)),
                    kExitOk);
        if (*info) return cmd_checkpoint_info(ck_file);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
