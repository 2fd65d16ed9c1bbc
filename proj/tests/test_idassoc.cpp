#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stma/idassoc.hpp"
#include "stma/metrics.hpp"
#include "stma/oracles.hpp"
#include "stma/pipeline.hpp"

using namespace stma;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

TemporalMemory random_memory(std::size_t entries, std::size_t n, std::size_t tokens,
                             std::size_t channels, std::size_t cv, Rng& rng) {
    TemporalMemory mem(entries, false);
    for (std::size_t e = 0; e < entries; ++e)
        mem.insert(e, random_normal({tokens, channels}, rng), random_normal({n, tokens, cv}, rng));
    return mem;
}

}  // namespace

TEST_CASE("affinity with the test's own key at extreme scale concentrates on the diagonal") {
    Rng rng(1);
    // equal-norm rows in distinct directions: the self dot strictly dominates
    Tensor key = random_normal({4, 6}, rng);
    for (std::size_t i = 0; i < 4; ++i) {
        double norm = 0.0;
        for (std::size_t c = 0; c < 6; ++c) norm += key.at(i, c) * key.at(i, c);
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < 6; ++c) key.at(i, c) *= 100.0 / norm;
    }
    TemporalMemory mem(2, false);
    mem.insert(0, key, Tensor::zeros({1, 4, 2}));
    FeatureMap test{key, 1, 4};
    AffinityResult res = affinity(test, mem);
    for (std::size_t i = 0; i < 4; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < 4; ++j)
            if (res.affinity.weights.at(i, j) > res.affinity.weights.at(i, best)) best = j;
        CHECK(best == i);
    }
}

TEST_CASE("identical keys give uniform affinity rows") {
    TemporalMemory mem(3, false);
    mem.insert(0, Tensor::full({3, 4}, 0.5), Tensor::zeros({1, 3, 2}));
    mem.insert(1, Tensor::full({3, 4}, 0.5), Tensor::zeros({1, 3, 2}));
    Rng rng(2);
    FeatureMap test{random_normal({3, 4}, rng), 1, 3};
    AffinityResult res = affinity(test, mem);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            CHECK(res.affinity.weights.at(i, j) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("affinity matches the brute-force oracle for both similarity kinds") {
    Rng rng(3);
    TemporalMemory mem = random_memory(3, 2, 4, 6, 3, rng);
    FeatureMap test{random_normal({4, 6}, rng), 1, 4};
    for (AffinityKind kind : {AffinityKind::Dot, AffinityKind::L2}) {
        AffinityResult res = affinity(test, mem, kind);
        CHECK(max_abs_diff(res.affinity.weights, oracle::affinity_reference(test, mem, kind)) <
              1e-10);
        double mass = 0.0;
        for (double inc : res.usage.increments) {
            CHECK(inc >= 0.0);
            mass += inc;
        }
        CHECK(mass == doctest::Approx(4.0).epsilon(1e-9));
    }
    CHECK_THROWS_AS(affinity(test, TemporalMemory(2, false)), ContractError);
}

TEST_CASE("one-hot affinity rows select value rows exactly") {
    Rng rng(4);
    TemporalMemory mem = random_memory(2, 2, 3, 4, 3, rng);
    Tensor onehot({3, 6});
    onehot.at(0, 4) = 1.0;
    onehot.at(1, 0) = 1.0;
    onehot.at(2, 5) = 1.0;
    ReadoutFeatures r = readout(AffinityMatrix{onehot}, mem, 1, 3);
    for (std::size_t j = 0; j < 2; ++j) {
        const Tensor& v0 = mem.entries()[0].values;
        const Tensor& v1 = mem.entries()[1].values;
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(r.per_target[(j * 3 + 0) * 3 + c] == v1[(j * 3 + 1) * 3 + c]);  // column 4 = entry1 row1
            CHECK(r.per_target[(j * 3 + 1) * 3 + c] == v0[(j * 3 + 0) * 3 + c]);  // column 0
            CHECK(r.per_target[(j * 3 + 2) * 3 + c] == v1[(j * 3 + 2) * 3 + c]);  // column 5
        }
    }
}

TEST_CASE("uniform affinity averages the value rows") {
    Rng rng(5);
    TemporalMemory mem = random_memory(2, 1, 2, 4, 3, rng);
    Tensor uniform = Tensor::full({2, 4}, 0.25);
    ReadoutFeatures r = readout(AffinityMatrix{uniform}, mem, 1, 2);
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (const auto& e : mem.entries())
            for (std::size_t p = 0; p < 2; ++p) mean += e.values[p * 3 + c];
        mean /= 4.0;
        CHECK(r.per_target[c] == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("permuting targets in memory permutes readout rows identically") {
    Rng rng(6);
    TemporalMemory mem = random_memory(2, 3, 2, 4, 3, rng);
    TemporalMemory permuted(2, false);
    for (const auto& e : mem.entries()) {
        Tensor values({3, 2, 3});
        // target order (2,0,1)
        const std::size_t perm[3] = {2, 0, 1};
        for (std::size_t j = 0; j < 3; ++j)
            std::copy(e.values.data().begin() + perm[j] * 6, e.values.data().begin() + (perm[j] + 1) * 6,
                      values.data().begin() + j * 6);
        permuted.insert(e.frame_index + 100, e.key, values);
    }
    Tensor aff = softmax_rows(random_normal({2, 4}, rng));
    ReadoutFeatures base = readout(AffinityMatrix{aff}, mem, 1, 2);
    ReadoutFeatures perm = readout(AffinityMatrix{aff}, permuted, 1, 2);
    const std::size_t perm_map[3] = {2, 0, 1};
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < 6; ++i)
            CHECK(perm.per_target[j * 6 + i] == base.per_target[perm_map[j] * 6 + i]);
}

TEST_CASE("readout is linear in the affinity") {
    Rng rng(7);
    TemporalMemory mem = random_memory(3, 2, 3, 4, 3, rng);
    AffinityMatrix a1{softmax_rows(random_normal({3, 9}, rng))};
    AffinityMatrix a2{softmax_rows(random_normal({3, 9}, rng))};
    const double alpha = 0.4;
    AffinityMatrix mix{add(scale(a1.weights, alpha), scale(a2.weights, 1.0 - alpha))};
    Tensor lhs = readout(mix, mem, 1, 3).per_target;
    Tensor rhs = add(scale(readout(a1, mem, 1, 3).per_target, alpha),
                     scale(readout(a2, mem, 1, 3).per_target, 1.0 - alpha));
    CHECK(max_abs_diff(lhs, rhs) < 1e-10);
}

TEST_CASE("decode shares weights across targets") {
    Rng rng(8);
    DecoderWeights dec = make_decoder(8, 8, 8, rng);
    ConvStemWeights stem = make_conv_stem(8, 8, rng);
    Frame f = Frame::zeros(32, 32);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = d(rng);
    SkipFeatures skips = conv_stem(f, stem);

    Tensor one_target = random_normal({1, 4, 8}, rng);
    Tensor two_targets({2, 4, 8});
    std::copy(one_target.data().begin(), one_target.data().end(), two_targets.data().begin());
    std::copy(one_target.data().begin(), one_target.data().end(), two_targets.data().begin() + 32);
    Tensor logits = decode(ReadoutFeatures{two_targets, 2, 2}, skips, dec);
    REQUIRE(logits.shape() == std::vector<std::size_t>{2, 32, 32});
    for (std::size_t i = 0; i < 32 * 32; ++i) CHECK(logits[i] == logits[32 * 32 + i]);
}

TEST_CASE("zeroed decoder with a head bias yields a constant logit plane") {
    Rng rng9(9);
    DecoderWeights dec = make_decoder(4, 4, 4, rng9);
    auto zero = [](Conv2d& c) {
        c.weight = Tensor::zeros(c.weight.shape());
        c.bias = Tensor::zeros(c.bias.shape());
    };
    zero(dec.stage16.conv1);
    zero(dec.stage16.conv2);
    zero(dec.stage8.conv1);
    zero(dec.stage8.conv2);
    zero(dec.skip_eighth);
    zero(dec.skip_quarter);
    zero(dec.head);
    dec.head.bias[0] = 0.625;  // representable exactly

    SkipFeatures skips;
    skips.quarter = Tensor::zeros({64, 4});
    skips.quarter_h = skips.quarter_w = 8;
    skips.eighth = Tensor::zeros({16, 4});
    skips.eighth_h = skips.eighth_w = 4;
    Rng rng10(10);
    Tensor readout_vals = random_normal({1, 4, 4}, rng10);
    Tensor logits = decode(ReadoutFeatures{readout_vals, 2, 2}, skips, dec);
    for (double v : logits.data()) CHECK(v == doctest::Approx(0.625).epsilon(1e-14));
}

TEST_CASE("desk-config decode emits n x 64 x 64 logits") {
    Rng rng(11);
    DecoderWeights dec = make_decoder(32, 32, 32, rng);
    ConvStemWeights stem = make_conv_stem(32, 32, rng);
    SkipFeatures skips = conv_stem(Frame::zeros(64, 64), stem);
    Tensor r = random_normal({3, 16, 32}, rng);
    CHECK(decode(ReadoutFeatures{r, 4, 4}, skips, dec).shape() ==
          std::vector<std::size_t>{3, 64, 64});
}

TEST_CASE("aggregate saturation, tie rule, and normalization") {
    const double inf = std::numeric_limits<double>::infinity();
    Aggregated hot = aggregate(Tensor::full({1, 4, 4}, inf));
    Aggregated cold = aggregate(Tensor::full({1, 4, 4}, -inf));
    Aggregated tie = aggregate(Tensor::zeros({1, 4, 4}));
    for (std::size_t p = 0; p < 16; ++p) {
        CHECK(hot.masks.ids[p] == 1);
        CHECK(cold.masks.ids[p] == 0);
        CHECK(tie.masks.ids[p] == 0);  // 0.5 vs 0.5 goes to the smaller ID
        CHECK(tie.probabilities[p] == 0.5);
    }
    Rng rng(12);
    Aggregated agg = aggregate(random_normal({3, 5, 5}, rng, 3.0));
    for (std::size_t p = 0; p < 25; ++p) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 4; ++j) sum += agg.probabilities[j * 25 + p];
        CHECK(std::abs(sum - 1.0) < 1e-9);
        CHECK(agg.masks.ids[p] >= 0);
        CHECK(agg.masks.ids[p] <= 3);
    }
}

namespace {

// Rigged model: zero STML (pure residual), zero patch projection with a
// sharpened positional table (affinity becomes the exact identity), a
// center-tap mask encoder (ID values point-sample the mask), and a decoder
// that turns the value channel back into +/-400 logits.
ModelWeights constructed_weights(const ModelConfig& cfg) {
    ModelWeights w = init_model_weights(cfg);
    const std::size_t n_tokens = (cfg.frame_height / cfg.patch_size) * (cfg.frame_width / cfg.patch_size);
    w.embed.projection = Tensor::zeros({3 * cfg.patch_size * cfg.patch_size, cfg.channel_dim});
    w.embed.positional = scale(sinusoidal_table(n_tokens, cfg.channel_dim), 1000.0);

    for (auto& block : w.stml) {
        block.wq = block.wk = block.wv = block.wo =
            Tensor::zeros({cfg.channel_dim, cfg.channel_dim});
        block.ffn_w1 = Tensor::zeros({cfg.channel_dim, 4 * cfg.channel_dim});
        block.ffn_w2 = Tensor::zeros({4 * cfg.channel_dim, cfg.channel_dim});
        block.ffn_b1 = Tensor::zeros({1, 4 * cfg.channel_dim});
        block.ffn_b2 = Tensor::zeros({1, cfg.channel_dim});
    }

    auto center_tap = [](Conv2d& c, std::size_t in_channel) {
        c.weight = Tensor::zeros(c.weight.shape());
        c.bias = Tensor::zeros(c.bias.shape());
        const std::size_t cin = c.weight.shape()[1];
        const std::size_t k = c.weight.shape()[2];
        c.weight[(0 * cin + in_channel) * k * k + (k / 2) * k + k / 2] = 1.0;
    };
    center_tap(w.id_encoder.conv1, 3);  // read the mask plane
    center_tap(w.id_encoder.conv2, 0);
    center_tap(w.id_encoder.conv3, 0);
    center_tap(w.id_encoder.conv4, 0);

    auto zero_conv = [](Conv2d& c) {
        c.weight = Tensor::zeros(c.weight.shape());
        c.bias = Tensor::zeros(c.bias.shape());
    };
    zero_conv(w.stem.conv1);
    zero_conv(w.stem.conv2);
    zero_conv(w.stem.conv3);
    zero_conv(w.decoder.stage16.conv1);
    zero_conv(w.decoder.stage16.conv2);
    zero_conv(w.decoder.stage8.conv1);
    zero_conv(w.decoder.stage8.conv2);
    zero_conv(w.decoder.skip_eighth);
    zero_conv(w.decoder.skip_quarter);
    zero_conv(w.decoder.head);
    w.decoder.head.weight[(0 * 32 + 0) * 9 + 4] = 400.0;  // center tap on value channel 0
    w.decoder.head.bias[0] = -200.0;
    return w;
}

}  // namespace

TEST_CASE("replaying frame 0 under constructed weights reproduces its masks (J > 0.99)") {
    ModelConfig cfg;
    cfg.blocks = 1;
    cfg.seed = 5150;
    ModelWeights w = constructed_weights(cfg);

    Frame frame0 = Frame::zeros(64, 64);
    for (std::size_t i = 0; i < frame0.pixels.size(); ++i) frame0.pixels[i] = 0.25;
    TargetMasks masks0 = TargetMasks::background(64, 64);
    for (std::size_t y = 16; y < 32; ++y)
        for (std::size_t x = 16; x < 48; ++x) masks0.at(y, x) = 1;
    for (std::size_t y = 48; y < 64; ++y)
        for (std::size_t x = 0; x < 16; ++x) masks0.at(y, x) = 2;

    Segmenter seg(cfg, w);
    seg.initialize(frame0, masks0);
    const StepResult res = seg.step(frame0);  // frame 1 == frame 0

    CHECK(region_similarity_j(res.masks, masks0, 1) > 0.99);
    CHECK(region_similarity_j(res.masks, masks0, 2) > 0.99);
}

TEST_CASE("readout depends only on the shared affinity and the target's own values") {
    Rng rng(13);
    TemporalMemory mem = random_memory(2, 2, 3, 4, 3, rng);
    TemporalMemory other(2, false);
    for (const auto& e : mem.entries()) {
        Tensor values = e.values;
        // perturb target 1 only
        for (std::size_t i = 9; i < 18; ++i) values[i] += 1.0;
        other.insert(e.frame_index + 50, e.key, values);
    }
    Tensor aff = softmax_rows(random_normal({3, 6}, rng));
    Tensor base = readout(AffinityMatrix{aff}, mem, 1, 3).per_target;
    Tensor pert = readout(AffinityMatrix{aff}, other, 1, 3).per_target;
    for (std::size_t i = 0; i < 9; ++i) CHECK(base[i] == pert[i]);  // target 0 rows unchanged
}
