#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tagasc/fusion.hpp"
#include "tagasc/model.hpp"

using namespace tagasc;

namespace {

TensorPtr random_tag(std::size_t c, Rng& rng) {
    std::vector<double> d(c);
    for (auto& v : d) v = rng.uniform01();
    return Tensor::vec(std::move(d));
}

TensorPtr random_map(std::size_t t, std::size_t f, Rng& rng) {
    std::vector<double> d(t * f);
    for (auto& v : d) v = rng.uniform(-1.0, 1.0);
    return Tensor::create({t, f}, std::move(d));
}

}  // namespace

TEST_CASE("transform_tag with zero layers is the identity") {
    Rng rng(1);
    auto stack = make_tag_transform(5, 0, 128, 5, 0.3, rng);
    auto tag = random_tag(5, rng);
    auto out = transform_tag(tag, stack);
    CHECK(out->data == tag->data);
    CHECK(tag_stack_out_dim(stack, 5) == 5);

    CHECK_THROWS_AS(make_tag_transform(5, 0, 128, 7, 0.3, rng), ConfigError);
}

TEST_CASE("transform_tag stacks map through hidden layers to out_dim") {
    Rng rng(2);
    auto stack = make_tag_transform(8, 3, 16, 10, 0.3, rng);
    REQUIRE(stack.layers.size() == 3);
    CHECK(stack.layers[0].weight->shape == std::vector<std::size_t>{8, 16});
    CHECK(stack.layers[1].weight->shape == std::vector<std::size_t>{16, 16});
    CHECK(stack.layers[2].weight->shape == std::vector<std::size_t>{16, 10});
    auto out = transform_tag(random_tag(8, rng), stack);
    CHECK(out->shape == std::vector<std::size_t>{10});
}

TEST_CASE("grad check through a 2-layer tag transform") {
    Rng rng(3);
    auto stack = make_tag_transform(6, 2, 12, 4, 0.3, rng);
    auto tag = random_tag(6, rng);
    auto head_w = Tensor::full({4, 1}, 0.5);
    auto head_b = Tensor::zeros({1});
    auto f = [&](const TensorPtr& t) {
        return dense(transform_tag(t, stack), head_w, head_b);
    };
    CHECK(grad_check(f, tag) < 1e-4);
}

TEST_CASE("fuse_codecat layout: code then tag") {
    auto code = Tensor::zeros({64});
    for (std::size_t i = 0; i < 64; ++i) code->data[i] = static_cast<double>(i);
    auto tag = Tensor::zeros({80});
    auto fused = fuse_codecat(code, tag);
    CHECK(fused->shape == std::vector<std::size_t>{144});
    for (std::size_t i = 0; i < 64; ++i) CHECK(fused->data[i] == code->data[i]);
    for (std::size_t i = 64; i < 144; ++i) CHECK(fused->data[i] == 0.0);

    // swapping the blocks is distinguishable
    auto swapped = fuse_codecat(tag, code);
    CHECK(swapped->shape == std::vector<std::size_t>{144});
    CHECK(swapped->data != fused->data);
}

TEST_CASE("fuse_before_code ignores the tag when the transform is zeroed") {
    Rng rng(4);
    const std::size_t two_f = 12, c = 5, code_dim = 6;
    BeforeCodeParams params;
    params.transform = make_tag_transform(c, 2, 8, 8, 0.3, rng);
    params.code_fc = make_dense(two_f + 8, code_dim, rng);
    for (auto& layer : params.transform.layers) {
        std::fill(layer.weight->data.begin(), layer.weight->data.end(), 0.0);
        std::fill(layer.bias->data.begin(), layer.bias->data.end(), 0.0);
    }
    auto pooled = random_map(1, two_f, rng);
    auto pooled_vec = global_avg_pool(pooled);
    auto code_a = fuse_before_code(pooled_vec, random_tag(c, rng), params);
    auto code_b = fuse_before_code(pooled_vec, random_tag(c, rng), params);
    CHECK(code_a->data == code_b->data);
    CHECK(code_a->shape == std::vector<std::size_t>{code_dim});
}

TEST_CASE("fuse_before_code with zero layers is method two (raw tag concat)") {
    Rng rng(5);
    const std::size_t two_f = 8, c = 3, code_dim = 4;
    BeforeCodeParams params;
    params.transform = make_tag_transform(c, 0, 128, c, 0.3, rng);
    params.code_fc = make_dense(two_f + c, code_dim, rng);
    auto pooled = Tensor::vec({1, 2, 3, 4, 5, 6, 7, 8});
    auto tag = Tensor::vec({0.25, 0.5, 0.75});
    auto code = fuse_before_code(pooled, tag, params);
    auto manual = dense(concat1d({pooled, tag}), params.code_fc.weight, params.code_fc.bias);
    CHECK(code->data == manual->data);
}

TEST_CASE("attention map with zeroed head is uniform at h/f") {
    Rng rng(6);
    const std::size_t c = 5, f = 16, h = 4;
    auto stack = make_attention_stack(c, 1, 32, f, 0.3, rng);
    std::fill(stack.layers.back().weight->data.begin(), stack.layers.back().weight->data.end(),
              0.0);
    std::fill(stack.layers.back().bias->data.begin(), stack.layers.back().bias->data.end(), 0.0);
    auto a = attention_map(random_tag(c, rng), stack, h);
    for (double v : a.values->data) {
        CHECK(v == doctest::Approx(static_cast<double>(h) / f).epsilon(1e-12));
    }
}

TEST_CASE("attention map head axis: segment sums are 1 across the Table-3 grid") {
    Rng rng(7);
    const std::size_t c = 80, f = 128;
    for (std::size_t h : {2u, 4u, 8u, 16u, 32u}) {
        for (std::size_t depth : {0u, 1u, 2u, 3u}) {
            auto stack = make_attention_stack(c, depth, 128, f, 0.3, rng);
            for (int rep = 0; rep < 3; ++rep) {
                auto a = attention_map(random_tag(c, rng), stack, h);
                const std::size_t seg = f / h;
                for (std::size_t head = 0; head < h; ++head) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < seg; ++i) {
                        const double v = a.values->data[head * seg + i];
                        CHECK(v > 0.0);
                        CHECK(v < 1.0);
                        s += v;
                    }
                    CHECK(std::abs(s - 1.0) < 1e-9);
                }
            }
        }
    }
}

TEST_CASE("depth-0 attention stack is a single linear projection") {
    Rng rng(8);
    auto stack = make_attention_stack(5, 0, 64, 12, 0.3, rng);
    CHECK(stack.linear_projection);
    REQUIRE(stack.layers.size() == 1);
    CHECK(stack.layers[0].weight->shape == std::vector<std::size_t>{5, 12});
    // negative tag-projection values survive (no activation)
    auto tag = Tensor::vec({1.0, 0.0, 0.0, 0.0, 0.0});
    std::fill(stack.layers[0].weight->data.begin(), stack.layers[0].weight->data.end(), -2.0);
    auto out = transform_tag(tag, stack);
    for (double v : out->data) CHECK(v == doctest::Approx(-2.0));
}

TEST_CASE("apply_attention hand example and uniform scaling") {
    auto m = Tensor::create({1, 4}, {1.0, 2.0, 3.0, 4.0});
    AttentionMap a;
    a.values = Tensor::vec({0.25, 0.75, 0.75, 0.25});
    a.heads = 2;
    auto mp = apply_attention(m, a);
    CHECK(mp->data[0] == doctest::Approx(0.25));
    CHECK(mp->data[1] == doctest::Approx(1.5));
    CHECK(mp->data[2] == doctest::Approx(2.25));
    CHECK(mp->data[3] == doctest::Approx(1.0));

    // uniform A scales by h/f
    Rng rng(9);
    const std::size_t f = 8, h = 2;
    auto m2 = random_map(5, f, rng);
    AttentionMap uniform;
    uniform.values = softmax_segments(Tensor::zeros({f}), h);
    uniform.heads = h;
    auto scaled = apply_attention(m2, uniform);
    for (std::size_t i = 0; i < m2->size(); ++i) {
        CHECK(scaled->data[i] ==
              doctest::Approx(m2->data[i] * static_cast<double>(h) / f).epsilon(1e-12));
    }

    // shape preserved at full scale with h = 4
    auto m3 = Tensor::zeros({18, 128});
    AttentionMap a3;
    a3.values = softmax_segments(Tensor::zeros({128}), 4);
    a3.heads = 4;
    CHECK(apply_attention(m3, a3)->shape == std::vector<std::size_t>{18, 128});
}

TEST_CASE("apply_attention agrees with the brute-force elementwise oracle") {
    Rng rng(10);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t t = 1 + rng.below(8);
        const std::size_t h = 1 << rng.below(3);  // 1, 2, 4
        const std::size_t f = h * (1 + rng.below(32 / h));
        auto m = random_map(t, f, rng);
        auto logits = random_tag(f, rng);
        AttentionMap a;
        a.values = softmax_segments(logits, h);
        a.heads = h;
        auto fast = apply_attention(m, a);
        for (std::size_t ti = 0; ti < t; ++ti) {
            for (std::size_t fi = 0; fi < f; ++fi) {
                const double expect = m->data[ti * f + fi] * a.values->data[fi];
                CHECK(std::abs(fast->data[ti * f + fi] - expect) <= 1e-12);
            }
        }
    }
}

TEST_CASE("apply_attention is linear in the feature map") {
    Rng rng(11);
    const std::size_t t = 6, f = 12, h = 3;
    auto m1 = random_map(t, f, rng);
    auto m2 = random_map(t, f, rng);
    AttentionMap a;
    a.values = softmax_segments(random_tag(f, rng), h);
    a.heads = h;
    const double alpha = 1.7, beta = -0.6;
    auto lhs = apply_attention(add(scale(m1, alpha), scale(m2, beta)), a);
    auto rhs = add(scale(apply_attention(m1, a), alpha), scale(apply_attention(m2, a), beta));
    for (std::size_t i = 0; i < lhs->size(); ++i) {
        CHECK(std::abs(lhs->data[i] - rhs->data[i]) <= 1e-12);
    }
}

TEST_CASE("per-head logit shift leaves the attended map unchanged") {
    Rng rng(12);
    const std::size_t t = 4, f = 16, h = 4;
    auto m = random_map(t, f, rng);
    auto logits = random_tag(f, rng);
    auto shifted = Tensor::create(logits->shape, logits->data);
    const std::size_t seg = f / h;
    for (std::size_t i = 0; i < seg; ++i) shifted->data[2 * seg + i] += 3.1;  // head 2 only

    AttentionMap a1{softmax_segments(logits, h), h};
    AttentionMap a2{softmax_segments(shifted, h), h};
    auto y1 = apply_attention(m, a1);
    auto y2 = apply_attention(m, a2);
    for (std::size_t i = 0; i < y1->size(); ++i) {
        CHECK(std::abs(y1->data[i] - y2->data[i]) < 1e-9);
    }
}

TEST_CASE("gradients flow through attention_map composed with apply_attention") {
    Rng rng(13);
    const std::size_t c = 6, f = 8, h = 2, t = 3;
    auto stack = make_attention_stack(c, 2, 10, f, 0.3, rng);
    auto m = random_map(t, f, rng);
    auto head_w = Tensor::full({2 * f, 1}, 0.4);
    auto head_b = Tensor::zeros({1});

    auto wrt_tag = [&](const TensorPtr& tag) {
        auto a = attention_map(tag, stack, h);
        auto mp = apply_attention(m, a);
        auto pooled = concat1d({global_avg_pool(mp), global_max_pool(mp)});
        return dense(pooled, head_w, head_b);
    };
    CHECK(grad_check(wrt_tag, random_tag(c, rng)) < 1e-4);

    auto tag_fixed = random_tag(c, rng);
    auto wrt_map = [&](const TensorPtr& mm) {
        auto a = attention_map(tag_fixed, stack, h);
        auto mp = apply_attention(mm, a);
        auto pooled = concat1d({global_avg_pool(mp), global_max_pool(mp)});
        return dense(pooled, head_w, head_b);
    };
    CHECK(grad_check(wrt_map, m) < 1e-4);

    auto wrt_stack_w = [&](const TensorPtr& w) {
        auto saved = stack.layers[0].weight;
        stack.layers[0].weight = w;
        auto a = attention_map(tag_fixed, stack, h);
        stack.layers[0].weight = saved;
        auto mp = apply_attention(m, a);
        auto pooled = concat1d({global_avg_pool(mp), global_max_pool(mp)});
        return dense(pooled, head_w, head_b);
    };
    CHECK(grad_check(wrt_stack_w, stack.layers[0].weight) < 1e-4);
}

TEST_CASE("combined fusion with neutralized branches equals scaled-map baseline") {
    Rng rng(14);
    const std::size_t c = 5, f = 8, h = 2, t = 6;
    CombinedParams params;
    params.shared = true;
    params.heads = h;
    params.shared_stack = make_attention_stack(c, 3, 16, f, 0.3, rng);
    params.code_fc = make_dense(2 * f + f, 4, rng);
    // zero the shared stack -> attention logits 0 (uniform map) and a zero
    // concat branch
    for (auto& layer : params.shared_stack.layers) {
        std::fill(layer.weight->data.begin(), layer.weight->data.end(), 0.0);
        std::fill(layer.bias->data.begin(), layer.bias->data.end(), 0.0);
    }

    auto m = random_map(t, f, rng);
    auto tag = random_tag(c, rng);
    auto combined = fuse_combined(m, tag, params);

    // independent route: scale M by h/f, pool, concat zeros, same code FC
    auto scaled = scale(m, static_cast<double>(h) / f);
    auto pooled = concat1d({global_avg_pool(scaled), global_max_pool(scaled)});
    auto manual = dense(concat1d({pooled, Tensor::zeros({f})}), params.code_fc.weight,
                        params.code_fc.bias);
    REQUIRE(combined.code->size() == manual->size());
    for (std::size_t i = 0; i < manual->size(); ++i) {
        CHECK(std::abs(combined.code->data[i] - manual->data[i]) <= 1e-12);
    }
}

TEST_CASE("combined separate mode wires two independent stacks") {
    Rng rng(15);
    const std::size_t c = 5, f = 8, h = 4, t = 3;
    CombinedParams params;
    params.shared = false;
    params.heads = h;
    params.concat_stack = make_tag_transform(c, 4, 16, 16, 0.3, rng);
    params.att_stack = make_attention_stack(c, 3, 16, f, 0.3, rng);
    params.code_fc = make_dense(2 * f + 16, 4, rng);

    auto m = random_map(t, f, rng);
    auto tag = random_tag(c, rng);
    auto out = fuse_combined(m, tag, params);
    CHECK(out.code->shape == std::vector<std::size_t>{4});
    CHECK(out.attended->shape == m->shape);
    // attention segments normalized
    const std::size_t seg = f / h;
    for (std::size_t head = 0; head < h; ++head) {
        double s = 0.0;
        for (std::size_t i = 0; i < seg; ++i) s += out.att.values->data[head * seg + i];
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("fusion config validation") {
    FusionConfig cfg;
    cfg.mode = FusionMode::attention;
    cfg.n_heads = 3;
    CHECK_THROWS_AS(cfg.validate(128, 80), ConfigError);
    cfg.n_heads = 4;
    cfg.validate(128, 80);

    CHECK(fusion_mode_from_name("combined_shared") == FusionMode::combined_shared);
    CHECK(fusion_mode_name(FusionMode::before_code) == "before_code");
    CHECK_THROWS_AS(fusion_mode_from_name("bogus"), ConfigError);
}

TEST_CASE("fused model code dimensions per mode") {
    BackboneConfig full;  // 64-dim code
    FusionConfig codecat;
    codecat.mode = FusionMode::codecat;
    CHECK(fused_code_dim(full, codecat, 80) == 144);

    FusionConfig att;
    att.mode = FusionMode::attention;
    CHECK(fused_code_dim(full, att, 80) == 64);

    FusionConfig none;
    CHECK(fused_code_dim(full, none, 80) == 64);
}

TEST_CASE("fused model forward per mode on the desk scale") {
    auto bcfg = BackboneConfig::desk();
    const std::size_t c = 8;
    Rng rng2(17);
    std::vector<double> wd(bcfg.input_samples);
    for (auto& v : wd) v = rng2.uniform(-0.5, 0.5);
    auto wave = Tensor::create({bcfg.input_samples, 1}, wd);
    auto tag = random_tag(c, rng2);

    auto run = [&](FusionConfig fcfg) {
        Rng rng(18);
        FusedModel model(bcfg, fcfg, c, rng);
        NoGradGuard ng;
        return model.forward(wave, tag, BnMode::infer);
    };

    FusionConfig none;
    auto r0 = run(none);
    CHECK(r0.final_code->shape == std::vector<std::size_t>{8});
    CHECK(r0.logits->shape == std::vector<std::size_t>{4});

    FusionConfig cc;
    cc.mode = FusionMode::codecat;
    auto r1 = run(cc);
    CHECK(r1.final_code->shape == std::vector<std::size_t>{16});
    CHECK(r1.logits->shape == std::vector<std::size_t>{4});

    FusionConfig bc;
    bc.mode = FusionMode::before_code;
    bc.n_transform_layers = 3;
    bc.transform_hidden_dim = 24;
    auto r2 = run(bc);
    CHECK(r2.final_code->shape == std::vector<std::size_t>{8});

    FusionConfig at;
    at.mode = FusionMode::attention;
    at.n_heads = 2;
    at.n_transform_layers = 1;
    auto r3 = run(at);
    CHECK(r3.final_code->shape == std::vector<std::size_t>{8});
    CHECK(r3.feature_map->shape == std::vector<std::size_t>{29, 16});

    FusionConfig cs;
    cs.mode = FusionMode::combined_shared;
    cs.n_heads = 4;
    cs.n_transform_layers = 3;
    auto r4 = run(cs);
    CHECK(r4.final_code->shape == std::vector<std::size_t>{8});

    FusionConfig sep;
    sep.mode = FusionMode::combined_separate;
    sep.n_heads = 2;
    sep.n_transform_layers_concat = 4;
    sep.n_transform_layers_att = 3;
    auto r5 = run(sep);
    CHECK(r5.final_code->shape == std::vector<std::size_t>{8});

    // missing tag in a tag-using mode is a data error
    Rng rng3(19);
    FusedModel model(bcfg, cc, c, rng3);
    CHECK_THROWS_AS(model.forward(wave, nullptr, BnMode::infer), DataError);
}

TEST_CASE("checkpoint save/load round-trips bit-exactly") {
    namespace fs = std::filesystem;
    auto bcfg = BackboneConfig::desk();
    bcfg.input_samples = 96;  // keep it tiny
    bcfg.num_res_blocks = 1;
    FusionConfig fcfg;
    fcfg.mode = FusionMode::combined_shared;
    fcfg.n_heads = 4;
    fcfg.n_transform_layers = 2;
    fcfg.transform_hidden_dim = 12;
    Rng rng(20);
    FusedModel model(bcfg, fcfg, 8, rng);
    // perturb running stats so they are non-trivial
    model.bn_states()[0]->running_mean[0] = 0.123456789;

    const auto path = (fs::temp_directory_path() / "tagasc_ckpt_test.bin").string();
    save_checkpoint(path, model);
    auto loaded = load_checkpoint(path);

    auto pa = model.parameters();
    auto pb = loaded->parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->shape == pb[i]->shape);
        CHECK(pa[i]->data == pb[i]->data);
    }
    auto sa = model.bn_states();
    auto sb = loaded->bn_states();
    REQUIRE(sa.size() == sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i]->running_mean == sb[i]->running_mean);
        CHECK(sa[i]->running_var == sb[i]->running_var);
    }
    // byte-identical on re-save
    save_checkpoint(path + ".2", *loaded);
    std::ifstream f1(path, std::ios::binary), f2(path + ".2", std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    fs::remove(path);
    fs::remove(path + ".2");
}
