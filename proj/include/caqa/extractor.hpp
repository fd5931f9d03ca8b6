#pragma once

#include <stdexcept>

#include "caqa/tape.hpp"
#include "caqa/tensor.hpp"

namespace caqa {

/// Convex blend of a shared (general) joint graph with a task-specific one:
/// A = alpha * G + (1 - alpha) * S.
inline Var combine_graph(Tape& t, Var general, Var specific, double alpha) {
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("combine_graph: alpha " + std::to_string(alpha) +
                                    " outside [0, 1]");
    return t.add(t.scale(general, alpha), t.scale(specific, 1.0 - alpha));
}

inline Tensor combine_graph(const Tensor& general, const Tensor& specific, double alpha) {
    Tape t;
    Var r = combine_graph(t, t.leaf(general), t.leaf(specific), alpha);
    return t.val(r);
}

/// Motion commonality features: the mixed graph applied to every time slice
/// of the patch tensor, H[t] = A * v_p[t].
inline Var commonality_features(Tape& t, Var mixed_graph, Var patches) {
    return t.joint_mix(mixed_graph, patches);
}

inline Tensor commonality_features(const Tensor& mixed_graph, const Tensor& patches) {
    Tape t;
    return t.val(commonality_features(t, t.leaf(mixed_graph), t.leaf(patches)));
}

/// Per-joint difference features
///   out[t](i) = sum_j A(i,j) * (v_p[t](i) - prev[t](j)) * w(j)
/// where prev is the previous frame (zero-padded at t = 0), or the current
/// frame when same_frame is set. Rewritten as
///   rowsum(A .* w)(i) * v_p[t](i) - (A .* w) * prev[t]
/// so it stays inside the supported linear ops.
inline Var difference_features(Tape& t, Var mixed_graph, Var neighbor_weights, Var patches,
                               bool same_frame = false) {
    const std::size_t joints = t.val(mixed_graph).dim(0);
    Var weighted = t.scale_axis(mixed_graph, neighbor_weights, 1);
    Var row_sums = t.reshape(t.matmul(weighted, t.leaf(Tensor::filled({joints, 1}, 1.0))),
                             Shape{joints});
    Var self_term = t.scale_axis(patches, row_sums, 1);
    Var prev = same_frame ? patches : t.time_shift(patches);
    return t.sub(self_term, t.joint_mix(weighted, prev));
}

inline Tensor difference_features(const Tensor& mixed_graph, const Tensor& neighbor_weights,
                                  const Tensor& patches, bool same_frame = false) {
    Tape t;
    return t.val(difference_features(t, t.leaf(mixed_graph), t.leaf(neighbor_weights),
                                     t.leaf(patches), same_frame));
}

/// Mixed spatial/temporal graphs plus neighborhood weights for one task.
struct GraphNodes {
    Var spatial;
    Var temporal;
    Var weights;
};

/// Full extraction front half: builds commonality and difference features from
/// the patch tensor, concatenates everything per time step, and mean-pools
/// over time. Output width is D + 4*J*D.
inline Var pooled_concat_features(Tape& t, const GraphNodes& g, Var whole_scene, Var patches,
                                  bool spatial_same_frame = false) {
    const Tensor& vp = t.val(patches);
    const std::size_t T = vp.dim(0), J = vp.dim(1), D = vp.dim(2);
    Var common = commonality_features(t, g.spatial, patches);
    Var diff_s = difference_features(t, g.spatial, g.weights, patches, spatial_same_frame);
    Var diff_r = difference_features(t, g.temporal, g.weights, patches, false);
    const Shape flat{T, J * D};
    Var stacked = t.concat({whole_scene, t.reshape(patches, flat), t.reshape(common, flat),
                            t.reshape(diff_s, flat), t.reshape(diff_r, flat)},
                           1);
    return t.mean_axis(stacked, 0);
}

}  // namespace caqa
