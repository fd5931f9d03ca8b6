#pragma once

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "caqa/metrics.hpp"
#include "caqa/serialize.hpp"
#include "caqa/synth.hpp"
#include "caqa/training.hpp"

namespace caqa {

constexpr std::uint32_t kCheckpointMagic = 0x43514143;  // "CAQC"
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kDatasetMagic = 0x44514143;  // "CAQD"
constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline void write_params(BinWriter& w, const ParamSet& ps) {
    w.u64(ps.size());
    for (const auto& e : ps) {
        w.str(e.name);
        w.u8(static_cast<std::uint8_t>(e.group));
        w.tensor(e.value);
    }
}

inline ParamSet read_params(BinReader& r) {
    ParamSet ps;
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = r.str();
        const ParamGroup group = static_cast<ParamGroup>(r.u8());
        ps.add(std::move(name), r.tensor(), group);
    }
    return ps;
}

inline void write_clip(BinWriter& w, const FeatureClip& c) {
    w.tensor(c.whole_scene);
    w.tensor(c.patches);
    w.f64(c.score);
    w.i64(c.task_id);
}

inline FeatureClip read_clip(BinReader& r) {
    FeatureClip c;
    c.whole_scene = r.tensor();
    c.patches = r.tensor();
    c.score = r.f64();
    c.task_id = static_cast<int>(r.i64());
    return c;
}

inline void write_matrix(BinWriter& w, const PerformanceMatrix& m) {
    w.u64(m.stages());
    w.u8(static_cast<std::uint8_t>(m.kind()));
    for (std::size_t i = 0; i < m.stages(); ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            w.boolean(m.defined(i, j));
            if (m.defined(i, j)) w.f64(m.at(i, j));
        }
}

inline PerformanceMatrix read_matrix(BinReader& r) {
    const std::uint64_t stages = r.u64();
    const MetricKind kind = static_cast<MetricKind>(r.u8());
    PerformanceMatrix m(stages, kind);
    for (std::size_t i = 0; i < stages; ++i)
        for (std::size_t j = 0; j <= i; ++j)
            if (r.boolean()) m.set(i, j, r.f64());
    return m;
}

}  // namespace detail

/// Everything needed to continue a run mid-suite bit-identically: model,
/// optimizer moments, rehearsal memory, the partially filled performance
/// matrix and the trainer's random stream.
struct Checkpoint {
    std::string config_hash;
    std::size_t stages_done = 0;
    PerformanceMatrix matrix;
};

inline void save_checkpoint(std::ostream& out, const ContinualTrainer& trainer,
                            const PerformanceMatrix& matrix, const std::string& config_hash) {
    BinWriter w(out);
    w.u32(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.str(config_hash);

    const ModelState& m = trainer.model();
    const ModelConfig& mc = m.config();
    w.u64(mc.t_steps);
    w.u64(mc.joints);
    w.u64(mc.feat_dim);
    w.u64(mc.latent_dim);
    w.u64(mc.hidden_dim);
    w.f64(mc.alpha);
    w.boolean(mc.use_specific_graphs);
    w.boolean(mc.spatial_same_frame);

    detail::write_params(w, m.params());
    w.u64(m.graph_tasks().size());
    for (int t : m.graph_tasks()) w.i64(t);
    w.u64(m.seen_tasks().size());
    for (int t : m.seen_tasks()) w.i64(t);
    w.u64(m.all_stats().size());
    for (const auto& [task, st] : m.all_stats()) {
        w.i64(task);
        w.f64(st.mean);
        w.f64(st.stddev);
    }

    const AdamState& opt = const_cast<ContinualTrainer&>(trainer).optimizer();
    w.u64(opt.size());
    for (std::size_t i = 0; i < opt.size(); ++i) {
        w.tensor(opt.slot(i).m);
        w.tensor(opt.slot(i).v);
        w.u64(opt.slot(i).step);
    }

    const ExemplarStore& mem = trainer.memory();
    w.u64(mem.capacity());
    const auto tasks = mem.tasks();
    w.u64(tasks.size());
    for (int t : tasks) {
        w.i64(t);
        const auto& list = mem.list(t);
        w.u64(list.size());
        for (const Exemplar& e : list) {
            detail::write_clip(w, e.clip);
            w.f64(e.score);
            w.i64(e.source_task);
        }
    }

    w.u64(trainer.tasks_trained());
    w.str(const_cast<ContinualTrainer&>(trainer).rng().state());
    detail::write_matrix(w, matrix);
    w.finish();
}

/// Restores trainer state in place. The trainer must have been constructed
/// with the same model/trainer configuration the checkpoint was saved from.
inline Checkpoint load_checkpoint(std::istream& in, ContinualTrainer& trainer) {
    BinReader r(in);
    if (r.u32() != kCheckpointMagic)
        throw SerializeError("load_checkpoint: not a checkpoint file");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw SerializeError("load_checkpoint: unsupported version " + std::to_string(version) +
                             ", expected " + std::to_string(kCheckpointVersion));
    Checkpoint ck;
    ck.config_hash = r.str();

    ModelConfig mc;
    mc.t_steps = r.u64();
    mc.joints = r.u64();
    mc.feat_dim = r.u64();
    mc.latent_dim = r.u64();
    mc.hidden_dim = r.u64();
    mc.alpha = r.f64();
    mc.use_specific_graphs = r.boolean();
    mc.spatial_same_frame = r.boolean();

    ModelState restored(mc, 0);
    restored.replace_params(detail::read_params(r));
    const std::uint64_t n_graph_tasks = r.u64();
    std::vector<int> graph_tasks(n_graph_tasks);
    for (auto& t : graph_tasks) t = static_cast<int>(r.i64());
    const std::uint64_t n_seen = r.u64();
    std::vector<int> seen(n_seen);
    for (auto& t : seen) t = static_cast<int>(r.i64());
    restored.replace_task_registry(graph_tasks, seen);
    const std::uint64_t n_stats = r.u64();
    for (std::uint64_t i = 0; i < n_stats; ++i) {
        const int task = static_cast<int>(r.i64());
        ScoreStats st;
        st.mean = r.f64();
        st.stddev = r.f64();
        restored.set_stats(task, st);
    }
    trainer.model() = std::move(restored);

    AdamState& opt = trainer.optimizer();
    opt = AdamState();
    const std::uint64_t n_slots = r.u64();
    opt.ensure(trainer.model().params());
    if (n_slots != opt.size())
        throw SerializeError("load_checkpoint: optimizer slot count mismatch");
    for (std::size_t i = 0; i < opt.size(); ++i) {
        opt.slot(i).m = r.tensor();
        opt.slot(i).v = r.tensor();
        opt.slot(i).step = r.u64();
    }

    ExemplarStore mem(r.u64());
    const std::uint64_t n_tasks = r.u64();
    for (std::uint64_t i = 0; i < n_tasks; ++i) {
        const int task = static_cast<int>(r.i64());
        const std::uint64_t n_items = r.u64();
        std::vector<Exemplar> list;
        list.reserve(n_items);
        for (std::uint64_t j = 0; j < n_items; ++j) {
            Exemplar e;
            e.clip = detail::read_clip(r);
            e.score = r.f64();
            e.source_task = static_cast<int>(r.i64());
            list.push_back(std::move(e));
        }
        mem.set_task_list(task, std::move(list));
    }
    trainer.memory() = std::move(mem);

    ck.stages_done = r.u64();
    trainer.set_tasks_trained(ck.stages_done);
    trainer.rng().restore(r.str());
    ck.matrix = detail::read_matrix(r);
    r.finish();
    return ck;
}

inline void save_checkpoint_file(const std::string& path, const ContinualTrainer& trainer,
                                 const PerformanceMatrix& matrix, const std::string& config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SerializeError("save_checkpoint: cannot open " + path);
    save_checkpoint(out, trainer, matrix, config_hash);
}

inline Checkpoint load_checkpoint_file(const std::string& path, ContinualTrainer& trainer) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SerializeError("load_checkpoint: cannot open " + path);
    return load_checkpoint(in, trainer);
}

// ---------------------------------------------------------------------------
// Dataset cache: versioned binary snapshots keyed by a spec fingerprint.
// ---------------------------------------------------------------------------

inline std::uint64_t task_spec_fingerprint(const TaskSpec& s) {
    std::ostringstream os;
    os << s.task_id << '|' << s.suite_seed << '|' << s.seed << '|' << s.t_steps << '|' << s.joints
       << '|' << s.feat_dim << '|' << s.n_train << '|' << s.n_test << '|' << s.score_min << '|'
       << s.score_max << '|' << s.shared_weight << '|' << s.noise;
    const std::string str = os.str();
    return fnv1a(str.data(), str.size());
}

inline void save_task_dataset(std::ostream& out, const TaskDataset& ds, std::uint64_t fingerprint) {
    BinWriter w(out);
    w.u32(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u64(fingerprint);
    w.i64(ds.task_id);
    w.f64(ds.score_min);
    w.f64(ds.score_max);
    w.u64(ds.train.size());
    for (const FeatureClip& c : ds.train) detail::write_clip(w, c);
    w.u64(ds.test.size());
    for (const FeatureClip& c : ds.test) detail::write_clip(w, c);
    w.finish();
}

inline TaskDataset load_task_dataset(std::istream& in, std::uint64_t expect_fingerprint) {
    BinReader r(in);
    if (r.u32() != kDatasetMagic) throw SerializeError("load_task_dataset: not a dataset file");
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw SerializeError("load_task_dataset: unsupported version " + std::to_string(version));
    const std::uint64_t fp = r.u64();
    if (fp != expect_fingerprint)
        throw SerializeError("load_task_dataset: spec fingerprint mismatch, cache is stale");
    TaskDataset ds;
    ds.task_id = static_cast<int>(r.i64());
    ds.score_min = r.f64();
    ds.score_max = r.f64();
    const std::uint64_t n_train = r.u64();
    ds.train.reserve(n_train);
    for (std::uint64_t i = 0; i < n_train; ++i) ds.train.push_back(detail::read_clip(r));
    const std::uint64_t n_test = r.u64();
    ds.test.reserve(n_test);
    for (std::uint64_t i = 0; i < n_test; ++i) ds.test.push_back(detail::read_clip(r));
    r.finish();
    return ds;
}

/// Returns the cached dataset if a valid cache file exists, else generates
/// and writes it.
inline TaskDataset generate_task_cached(const TaskSpec& spec, const std::string& cache_dir) {
    const std::uint64_t fp = task_spec_fingerprint(spec);
    char name[64];
    std::snprintf(name, sizeof name, "task_%016llx.bin", static_cast<unsigned long long>(fp));
    const std::string path = cache_dir + "/" + name;
    {
        std::ifstream in(path, std::ios::binary);
        if (in) {
            try {
                return load_task_dataset(in, fp);
            } catch (const SerializeError&) {
                // stale or damaged cache entry: fall through and regenerate
            }
        }
    }
    TaskDataset ds = generate_task(spec);
    std::ofstream out(path, std::ios::binary);
    if (out) save_task_dataset(out, ds, fp);
    return ds;
}

}  // namespace caqa
