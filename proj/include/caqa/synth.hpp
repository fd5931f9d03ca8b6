#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "caqa/dataset.hpp"
#include "caqa/rng.hpp"
#include "caqa/tensor.hpp"

namespace caqa {

/// Recipe for one synthetic task. The suite seed fixes structure shared by
/// every task (joint codes, shared interaction pattern, scene projection);
/// the task seed fixes the task's own joint-pair pattern and all item draws.
struct TaskSpec {
    int task_id = 1;
    std::uint64_t suite_seed = 1;
    std::uint64_t seed = 1;
    std::size_t t_steps = 8;
    std::size_t joints = 5;
    std::size_t feat_dim = 16;
    std::size_t n_train = 120;
    std::size_t n_test = 40;
    double score_min = 0.0;
    double score_max = 1.0;
    double shared_weight = 0.4;  // fraction of the signal shared across tasks
    double noise = 0.05;

    void validate() const {
        if (t_steps == 0 || joints == 0 || feat_dim == 0)
            throw std::invalid_argument("TaskSpec: zero dimension");
        if (n_train == 0 || n_test == 0)
            throw std::invalid_argument("TaskSpec: empty split");
        if (shared_weight < 0.0 || shared_weight > 1.0)
            throw std::invalid_argument("TaskSpec: shared_weight outside [0, 1]");
        if (noise < 0.0) throw std::invalid_argument("TaskSpec: negative noise");
        if (!(score_max > score_min))
            throw std::invalid_argument("TaskSpec: score range is empty");
    }
};

struct SuiteSpec {
    std::uint64_t suite_seed = 1;
    std::vector<TaskSpec> tasks;
    std::vector<std::uint64_t> order_seeds{0, 1, 2, 3};

    void validate() const {
        if (tasks.empty()) throw std::invalid_argument("SuiteSpec: no tasks");
        if (order_seeds.empty()) throw std::invalid_argument("SuiteSpec: no order seeds");
        for (const TaskSpec& t : tasks) {
            t.validate();
            if (t.suite_seed != suite_seed)
                throw std::invalid_argument("SuiteSpec: task " + std::to_string(t.task_id) +
                                            " carries a foreign suite seed");
            if (t.t_steps != tasks[0].t_steps || t.joints != tasks[0].joints ||
                t.feat_dim != tasks[0].feat_dim)
                throw std::invalid_argument("SuiteSpec: tasks disagree on tensor dims");
        }
        for (std::size_t i = 0; i < tasks.size(); ++i)
            for (std::size_t j = i + 1; j < tasks.size(); ++j)
                if (tasks[i].task_id == tasks[j].task_id)
                    throw std::invalid_argument("SuiteSpec: duplicate task id " +
                                                std::to_string(tasks[i].task_id));
    }
};

namespace detail {

inline Tensor pattern_tensor(Rng& rng, const Tensor& codes, std::size_t T, std::size_t J,
                             std::size_t D) {
    // signed joint-pair mask, temporal profile, then mix codes through the mask
    Tensor mask({J, J});
    for (double& v : mask.values()) {
        const double u = rng.uniform01();
        v = u < 0.25 ? -1.0 : (u < 0.5 ? 1.0 : 0.0);
    }
    std::vector<double> profile(T);
    for (double& v : profile) v = rng.uniform(0.5, 1.5);

    Tensor p({T, J, D});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < J; ++i)
            for (std::size_t j = 0; j < J; ++j) {
                if (mask.at(i, j) == 0.0) continue;
                for (std::size_t d = 0; d < D; ++d)
                    p.at(t, i, d) += mask.at(i, j) * profile[t] * codes.at(j, d);
            }
    double norm = 0.0;
    for (double v : p.values()) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (double& v : p.values()) v /= norm;
    return p;
}

/// All task signals live inside a span this small; later tasks then compete
/// for the same readout directions instead of occupying fresh orthogonal
/// ones, which is what makes sequential training actually interfere.
constexpr std::size_t kPatternSpaceDim = 4;

struct SuiteBasis {
    Tensor codes;               // J x D per-joint code vectors
    std::vector<Tensor> span;   // orthonormal pattern-space basis
    Tensor shared_pattern;      // = span[0]
    Tensor shared_base;         // shared part of the task placement offsets
    Tensor projection;          // D x D scene projection
};

inline SuiteBasis make_suite_basis(std::uint64_t suite_seed, std::size_t T, std::size_t J,
                                   std::size_t D) {
    Rng rng(Rng::mix(suite_seed, 0x5017eBA5EULL));
    SuiteBasis b;
    b.codes = Tensor({J, D});
    for (double& v : b.codes.values()) v = rng.normal(0.0, 1.0);
    for (std::size_t l = 0; l < kPatternSpaceDim; ++l) {
        Tensor p = pattern_tensor(rng, b.codes, T, J, D);
        for (const Tensor& prev : b.span) {
            double dot = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * prev[i];
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= dot * prev[i];
        }
        double norm = 0.0;
        for (double v : p.values()) norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : p.values()) v /= norm;
        b.span.push_back(std::move(p));
    }
    b.shared_pattern = b.span[0];
    b.shared_base = pattern_tensor(rng, b.codes, T, J, D);
    b.projection = Tensor({D, D});
    const double lim = 1.0 / std::sqrt(static_cast<double>(D));
    for (double& v : b.projection.values()) v = rng.uniform(-lim, lim);
    return b;
}

/// The task's own pattern: its joint-pair mask pattern projected into the
/// suite's pattern space with the anchor axis removed, then normalized. The
/// anchor carries the shared part of the signal, so the task-specific part is
/// what remains orthogonal to it.
inline Tensor task_pattern(Rng& task_rng, const SuiteBasis& basis, const Tensor& anchor,
                           std::size_t T, std::size_t J, std::size_t D) {
    Tensor raw = pattern_tensor(task_rng, basis.codes, T, J, D);
    Tensor p(raw.shape());
    for (const Tensor& axis : basis.span) {
        double dot = 0.0;
        for (std::size_t i = 0; i < raw.size(); ++i) dot += raw[i] * axis[i];
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += dot * axis[i];
    }
    double along = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) along += p[i] * anchor[i];
    double norm = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= along * anchor[i];
        norm += p[i] * p[i];
    }
    norm = std::sqrt(norm);
    if (norm > 1e-12)
        for (double& v : p.values()) v /= norm;
    return p;
}

inline void blend_unit(Tensor& out, const Tensor& shared, const Tensor& own, double gamma) {
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = gamma * shared[i] + (1.0 - gamma) * own[i];
    double norm = 0.0;
    for (double v : out.values()) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 1e-12)
        for (double& v : out.values()) v /= norm;
}

constexpr double kSignalAmplitude = 0.6;
constexpr double kCurveAmplitude = 0.45;
constexpr double kBaseAmplitude = 1.0;

/// Where a task's items live: a placement offset (where the action category
/// sits in feature space), the quality direction its score modulates, and a
/// curvature direction modulated by the squared quality so the item manifold
/// bends instead of being a straight ray. All are gamma-blends of a
/// suite-shared part and a task-specific part, so gamma = 1 collapses every
/// task onto one distribution. Quality and curvature directions are confined
/// to the suite's low-dimensional pattern space; placement offsets are not,
/// which is what lets a model tell tasks apart.
struct TaskGeometry {
    Tensor direction;  // unit, in pattern space
    Tensor curve;      // unit, in pattern space
    Tensor base;       // scaled placement offset
};

inline TaskGeometry task_geometry(const TaskSpec& spec, const SuiteBasis& basis) {
    Rng rng(Rng::mix(spec.suite_seed, Rng::mix(spec.seed, 17)));
    const std::size_t T = spec.t_steps, J = spec.joints, D = spec.feat_dim;
    Tensor own_dir = task_pattern(rng, basis, basis.shared_pattern, T, J, D);
    Tensor own_curve = task_pattern(rng, basis, basis.span[1], T, J, D);
    Tensor own_base = pattern_tensor(rng, basis.codes, T, J, D);
    TaskGeometry g;
    g.direction = Tensor(own_dir.shape());
    blend_unit(g.direction, basis.shared_pattern, own_dir, spec.shared_weight);
    g.curve = Tensor(own_curve.shape());
    blend_unit(g.curve, basis.span[1], own_curve, spec.shared_weight);
    g.base = Tensor(own_base.shape());
    blend_unit(g.base, basis.shared_base, own_base, spec.shared_weight);
    for (double& v : g.base.values()) v *= kBaseAmplitude;
    return g;
}

}  // namespace detail

/// The task's quality direction in patch space: a unit-norm blend of the
/// suite-shared pattern and the task's own joint-pair pattern.
inline Tensor task_signal_direction(const TaskSpec& spec) {
    spec.validate();
    detail::SuiteBasis basis =
        detail::make_suite_basis(spec.suite_seed, spec.t_steps, spec.joints, spec.feat_dim);
    return detail::task_geometry(spec, basis).direction;
}

/// The task's placement offset (category centroid) in patch space.
inline Tensor task_base_offset(const TaskSpec& spec) {
    spec.validate();
    detail::SuiteBasis basis =
        detail::make_suite_basis(spec.suite_seed, spec.t_steps, spec.joints, spec.feat_dim);
    return detail::task_geometry(spec, basis).base;
}

/// Deterministic dataset synthesis: each item draws a latent quality
/// q ~ U[0,1], maps it affinely into the task's score range, and modulates the
/// task's quality direction by (q - 1/2) around the task's placement offset,
/// plus isotropic feature noise. The whole-scene stream is a projected
/// joint-mean of the patches plus noise.
inline TaskDataset generate_task(const TaskSpec& spec) {
    spec.validate();
    const std::size_t T = spec.t_steps, J = spec.joints, D = spec.feat_dim;
    detail::SuiteBasis basis = detail::make_suite_basis(spec.suite_seed, T, J, D);
    detail::TaskGeometry geo = detail::task_geometry(spec, basis);
    Rng rng(Rng::mix(spec.suite_seed, Rng::mix(spec.seed, 0x17e35ULL)));

    auto make_clip = [&]() {
        FeatureClip clip;
        clip.task_id = spec.task_id;
        const double q = rng.uniform01();
        clip.score = spec.score_min + q * (spec.score_max - spec.score_min);
        clip.patches = Tensor({T, J, D});
        const double lin = (q - 0.5) * detail::kSignalAmplitude;
        const double sq = (q - 0.5) * (q - 0.5) * detail::kCurveAmplitude;
        for (std::size_t i = 0; i < clip.patches.size(); ++i)
            clip.patches[i] = geo.base[i] + lin * geo.direction[i] + sq * geo.curve[i] +
                              spec.noise * rng.normal(0.0, 1.0);
        clip.whole_scene = Tensor({T, D});
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> pooled(D, 0.0);
            for (std::size_t j = 0; j < J; ++j)
                for (std::size_t d = 0; d < D; ++d) pooled[d] += clip.patches.at(t, j, d);
            for (double& v : pooled) v /= static_cast<double>(J);
            for (std::size_t d = 0; d < D; ++d) {
                double acc = 0.0;
                for (std::size_t d2 = 0; d2 < D; ++d2)
                    acc += basis.projection.at(d, d2) * pooled[d2];
                clip.whole_scene.at(t, d) = acc + spec.noise * rng.normal(0.0, 1.0);
            }
        }
        return clip;
    };

    TaskDataset ds;
    ds.task_id = spec.task_id;
    ds.score_min = spec.score_min;
    ds.score_max = spec.score_max;
    ds.train.reserve(spec.n_train);
    ds.test.reserve(spec.n_test);
    for (std::size_t i = 0; i < spec.n_train; ++i) ds.train.push_back(make_clip());
    for (std::size_t i = 0; i < spec.n_test; ++i) ds.test.push_back(make_clip());
    return ds;
}

inline std::vector<TaskDataset> generate_suite_datasets(const SuiteSpec& suite) {
    suite.validate();
    std::vector<TaskDataset> out;
    out.reserve(suite.tasks.size());
    for (const TaskSpec& t : suite.tasks) out.push_back(generate_task(t));
    return out;
}

/// Task-order permutation for one order seed (indices into suite.tasks).
inline std::vector<std::size_t> order_permutation(std::size_t n_tasks, std::uint64_t order_seed) {
    std::vector<std::size_t> order(n_tasks);
    for (std::size_t i = 0; i < n_tasks; ++i) order[i] = i;
    Rng rng(Rng::mix(order_seed, 0x02dE25EEDULL));
    rng.shuffle(order);
    return order;
}

/// Default five-task suite: shared tensor dims, disjoint per-task score
/// ranges ([10k, 10k+10] for task k), one task seed per task.
inline SuiteSpec default_suite_spec(std::uint64_t suite_seed = 1, std::size_t n_tasks = 5) {
    SuiteSpec s;
    s.suite_seed = suite_seed;
    for (std::size_t k = 1; k <= n_tasks; ++k) {
        TaskSpec t;
        t.task_id = static_cast<int>(k);
        t.suite_seed = suite_seed;
        t.seed = Rng::mix(suite_seed, k);
        t.score_min = 10.0 * static_cast<double>(k);
        t.score_max = 10.0 * static_cast<double>(k) + 10.0;
        s.tasks.push_back(t);
    }
    return s;
}

}  // namespace caqa
