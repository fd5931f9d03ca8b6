#include <catch2/catch_amalgamated.hpp>

#include "caqa/extractor.hpp"
#include "caqa/model.hpp"
#include "caqa/params.hpp"
#include "caqa/rng.hpp"

using namespace caqa;

namespace {

Tensor rand_tensor(Rng& rng, Shape s, double lim = 1.0) {
    Tensor t(std::move(s));
    for (double& v : t.values()) v = rng.uniform(-lim, lim);
    return t;
}

FeatureClip rand_clip(Rng& rng, std::size_t T, std::size_t J, std::size_t D) {
    FeatureClip c;
    c.whole_scene = rand_tensor(rng, {T, D});
    c.patches = rand_tensor(rng, {T, J, D});
    return c;
}

}  // namespace

TEST_CASE("combine_graph endpoints and midpoint") {
    Tensor G({2, 2}, {1, 0, 0, 1});
    Tensor S({2, 2}, {0, 2, 2, 0});
    CHECK(combine_graph(G, S, 1.0) == G);
    CHECK(combine_graph(G, S, 0.0) == S);
    CHECK(combine_graph(G, S, 0.5) == Tensor({2, 2}, {0.5, 1, 1, 0.5}));
    CHECK_THROWS_AS(combine_graph(G, S, 1.5), std::invalid_argument);
    Tape t;
    CHECK_THROWS_AS(combine_graph(t, t.leaf(G), t.leaf(Tensor({3, 3})), 0.5), TapeError);
}

TEST_CASE("combine_graph is affine in each argument") {
    Rng rng(99);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor G = rand_tensor(rng, {3, 3}), Gp = rand_tensor(rng, {3, 3});
        Tensor S = rand_tensor(rng, {3, 3}), Sp = rand_tensor(rng, {3, 3});
        const double alpha = rng.uniform01();
        Tensor lhs_a = combine_graph(G, S, alpha), lhs_b = combine_graph(Gp, Sp, alpha);
        Tensor sumG = G, sumS = S;
        for (std::size_t i = 0; i < sumG.size(); ++i) sumG[i] += Gp[i];
        for (std::size_t i = 0; i < sumS.size(); ++i) sumS[i] += Sp[i];
        Tensor rhs = combine_graph(sumG, sumS, alpha);
        for (std::size_t i = 0; i < rhs.size(); ++i)
            CHECK(lhs_a[i] + lhs_b[i] == Catch::Approx(rhs[i]).margin(1e-12));
    }
}

TEST_CASE("commonality features: identity, zero, and a 2x2 product") {
    Rng rng(5);
    Tensor vp = rand_tensor(rng, {3, 2, 4});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    CHECK(commonality_features(eye, vp) == vp);
    CHECK(commonality_features(Tensor({2, 2}), vp) == Tensor({3, 2, 4}));

    Tensor vp1({1, 2, 1}, {1, 3});
    Tensor swap({2, 2}, {0, 1, 1, 0});
    CHECK(commonality_features(swap, vp1) == Tensor({1, 2, 1}, {3, 1}));
}

TEST_CASE("difference features: zeros and the hand-worked T=2 case") {
    Rng rng(6);
    Tensor vp = rand_tensor(rng, {4, 3, 2});
    Tensor w = Tensor::filled({3}, 1.0);
    CHECK(difference_features(Tensor({3, 3}), w, vp) == Tensor({4, 3, 2}));
    CHECK(difference_features(rand_tensor(rng, {3, 3}), Tensor({3}), vp) == Tensor({4, 3, 2}));

    // T=2, J=1, D=1, v_p=[2,5], A=[1], w=[1]: t=1 zero-padded -> 2; t=2 -> 5-2=3
    Tensor vp1({2, 1, 1}, {2, 5});
    Tensor A({1, 1}, {1});
    Tensor w1({1}, {1});
    CHECK(difference_features(A, w1, vp1) == Tensor({2, 1, 1}, {2, 3}));

    // same-frame variant with J=1: A*(v - v)*w = 0 everywhere
    CHECK(difference_features(A, w1, vp1, true) == Tensor({2, 1, 1}, {0, 0}));
}

TEST_CASE("difference features match a direct triple-loop oracle") {
    Rng rng(7);
    const std::size_t T = 3, J = 4, D = 2;
    Tensor A = rand_tensor(rng, {J, J});
    Tensor w = rand_tensor(rng, {J});
    Tensor vp = rand_tensor(rng, {T, J, D});
    for (bool same_frame : {false, true}) {
        Tensor expect({T, J, D});
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < J; ++i)
                for (std::size_t j = 0; j < J; ++j)
                    for (std::size_t d = 0; d < D; ++d) {
                        double prev = 0.0;
                        if (same_frame)
                            prev = vp.at(t, j, d);
                        else if (t > 0)
                            prev = vp.at(t - 1, j, d);
                        expect.at(t, i, d) += A.at(i, j) * (vp.at(t, i, d) - prev) * w[j];
                    }
        Tensor got = difference_features(A, w, vp, same_frame);
        CHECK(max_abs_diff(got, expect) < 1e-12);
    }
}

TEST_CASE("extractor shape contract and zero-graph collapse") {
    ModelConfig cfg;
    cfg.t_steps = 4;
    cfg.joints = 3;
    cfg.feat_dim = 8;
    cfg.latent_dim = 16;
    CHECK(cfg.concat_width() == 104);  // 8 + 4*3*8

    ModelState model(cfg, 11);
    model.init_task_graphs(1);
    Rng rng(8);
    FeatureClip clip = rand_clip(rng, 4, 3, 8);
    Tensor f = extract_features(model, clip, 1);
    CHECK(f.shape() == Shape{16});
    CHECK(f.all_finite());

    // zero graphs: commonality and both difference blocks vanish, so the
    // pooled vector is (v_w ++ v_p ++ 0 ++ 0 ++ 0); with an identity-slice
    // head the latent is relu of the first entries of that pooled vector.
    ModelState zeroed(cfg, 11);
    zeroed.init_task_graphs(1);
    for (const std::string& n :
         {names::general_spatial, names::general_temporal, names::specific_spatial(1),
          names::specific_temporal(1)})
        zeroed.params().at(n) = Tensor({3, 3});
    Tensor& headw = zeroed.params().at("head.weight");
    headw = Tensor({16, 104});
    for (std::size_t i = 0; i < 16; ++i) headw.at(i, i) = 1.0;
    zeroed.params().at("head.bias") = Tensor(Shape{16});

    Tensor pooled({104});
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t d = 0; d < 8; ++d) pooled[d] += clip.whole_scene.at(t, d) / 4.0;
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t d = 0; d < 8; ++d)
                pooled[8 + j * 8 + d] += clip.patches.at(t, j, d) / 4.0;
    }
    Tensor fz = extract_features(zeroed, clip, 1);
    for (std::size_t i = 0; i < 16; ++i)
        CHECK(fz[i] == Catch::Approx(std::max(0.0, pooled[i])).margin(1e-12));
}

TEST_CASE("extraction is deterministic and conditioned only on its own task graph") {
    ModelConfig cfg;
    cfg.t_steps = 3;
    cfg.joints = 2;
    cfg.feat_dim = 4;
    cfg.latent_dim = 8;
    ModelState model(cfg, 21);
    model.init_task_graphs(1);
    model.init_task_graphs(2);

    Rng rng(22);
    FeatureClip clip = rand_clip(rng, 3, 2, 4);
    Tensor f1 = extract_features(model, clip, 1);
    CHECK(f1 == extract_features(model, clip, 1));

    // perturbing task 2's graphs must not change task 1 features
    model.params().at(names::specific_spatial(2)) = rand_tensor(rng, {2, 2});
    model.params().at(names::specific_temporal(2)) = rand_tensor(rng, {2, 2});
    CHECK(f1 == extract_features(model, clip, 1));
    CHECK_THROWS_AS(extract_features(model, clip, 3), std::out_of_range);
}

TEST_CASE("task graph initialization rules") {
    ModelConfig cfg;
    cfg.joints = 3;
    ModelState model(cfg, 31);

    Tensor g0 = model.params().at(names::general_spatial);
    model.init_task_graphs(1);
    // base step: blended graph equals the shared graph exactly
    Tensor a1 = combine_graph(model.params().at(names::general_spatial),
                              model.params().at(names::specific_spatial(1)), cfg.alpha);
    CHECK(max_abs_diff(a1, g0) == 0.0);

    // pretend task 1 learned something, then open task 2
    Rng rng(32);
    model.params().at(names::specific_spatial(1)) = rand_tensor(rng, {3, 3});
    model.init_task_graphs(2);
    CHECK(model.params().at(names::specific_spatial(2)) ==
          model.params().at(names::specific_spatial(1)));
    CHECK_THROWS_AS(model.init_task_graphs(2), std::invalid_argument);
}

TEST_CASE("full extractor gradients pass the finite-difference oracle") {
    ModelConfig cfg;
    cfg.t_steps = 3;
    cfg.joints = 2;
    cfg.feat_dim = 3;
    cfg.latent_dim = 6;
    cfg.hidden_dim = 5;
    ModelState model(cfg, 41);
    model.init_task_graphs(1);

    Rng rng(42);
    FeatureClip clip = rand_clip(rng, 3, 2, 3);
    Tensor target = rand_tensor(rng, {6});

    Program program = [&](Tape& t, const BoundParams& bp) {
        ModelTapeView view(t, model, bp);
        Var f = view.extract(clip, 1);
        return t.squared_error(f, t.leaf(target));
    };
    EvalResult rev = forward_backward(program, model.params());
    Grads fd = finite_diff_gradient(program, model.params(), 1e-4);
    CHECK(max_relative_error(rev.grads, fd) < 1e-4);
}
