#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "caqa/tensor.hpp"

namespace caqa {

/// One action instance as pre-extracted features: a whole-scene sequence
/// (T x D) plus per-joint patch features (T x J x D), with its quality score.
struct FeatureClip {
    Tensor whole_scene;  // T x D
    Tensor patches;      // T x J x D
    double score = 0.0;
    int task_id = 0;

    std::size_t t_steps() const { return patches.dim(0); }
    std::size_t joints() const { return patches.dim(1); }
    std::size_t feat_dim() const { return patches.dim(2); }

    void validate() const {
        if (whole_scene.rank() != 2 || patches.rank() != 3)
            throw std::invalid_argument("FeatureClip: whole_scene must be rank 2 and patches rank 3");
        if (whole_scene.dim(0) != patches.dim(0) || whole_scene.dim(1) != patches.dim(2))
            throw std::invalid_argument("FeatureClip: whole_scene " + shape_str(whole_scene.shape()) +
                                        " inconsistent with patches " + shape_str(patches.shape()));
    }
};

struct TaskDataset {
    int task_id = 0;
    std::vector<FeatureClip> train;
    std::vector<FeatureClip> test;
    double score_min = 0.0;
    double score_max = 1.0;
};

}  // namespace caqa
