// Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
// Criterion 9 drives the installed CLI; ctest passes its path via STMA_CLI.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stma/idassoc.hpp"
#include "stma/image.hpp"
#include "stma/losses.hpp"
#include "stma/memory.hpp"
#include "stma/metrics.hpp"
#include "stma/oracles.hpp"
#include "stma/pipeline.hpp"
#include "stma/stml.hpp"
#include "stma/synth.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

using namespace stma;
namespace fs = std::filesystem;

namespace {

void report(int criterion, const char* what, bool ok) {
    std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": " << what
              << std::endl;
    CHECK_MESSAGE(ok, "criterion ", criterion, ": ", what);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

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

StmlState random_state(std::size_t n, std::size_t m, std::size_t tokens, std::size_t channels,
                       Rng& rng) {
    StmlState s;
    s.test = FeatureMap{random_normal({tokens, channels}, rng), 1, tokens};
    for (std::size_t i = 0; i < m; ++i)
        s.references.push_back(FeatureMap{random_normal({tokens, channels}, rng), 1, tokens});
    s.objects = ObjectFeatures{random_normal({n, channels}, rng)};
    return s;
}

SyntheticSequence desk_sequence(std::size_t length, std::size_t targets, std::uint64_t seed) {
    SequenceSpec spec;
    spec.length = length;
    spec.targets = targets;
    spec.seed = seed;
    return generate_sequence(spec);
}

}  // namespace

TEST_CASE("criterion 1: decomposition equivalence over 50 random configurations") {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(0xC1);
    std::uniform_int_distribution<std::size_t> tok_d(1, 16), m_d(0, 3), n_d(1, 3), h_pick(0, 2);
    const std::size_t head_options[3] = {1, 2, 4};
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t tokens = tok_d(rng), m = m_d(rng), n = n_d(rng);
        const std::size_t heads = head_options[h_pick(rng)];
        StmlBlockWeights w = make_stml_block_weights(8, heads, rng);
        StmlState state = random_state(n, m, tokens, 8, rng);
        StmlState fast = stml_block(state, w, {StmlMode::Full, true});
        StmlState slow = joint_attention_oracle(state, w, asymmetric_visibility(n, m, tokens));
        worst = std::max(worst, max_abs_diff(fast.test.tokens, slow.test.tokens));
        worst = std::max(worst, max_abs_diff(fast.objects.vectors, slow.objects.vectors));
        for (std::size_t i = 0; i < m; ++i)
            worst = std::max(worst,
                             max_abs_diff(fast.references[i].tokens, slow.references[i].tokens));
    }
    const double elapsed = seconds_since(t0);
    report(1, "stml_block(full) matches the asymmetric joint-attention oracle (<1e-10)",
           worst < 1e-10);
    report(1, "runtime under 30 s", elapsed < 30.0);
}

TEST_CASE("criterion 2: isolation and direction invariants, 20 random trials") {
    Rng rng(0xC2);
    bool isolation = true, direction = true;
    for (int trial = 0; trial < 20; ++trial) {
        StmlState state = random_state(2, 3, 5, 8, rng);
        StmlBlockWeights w = make_stml_block_weights(8, 2, rng);
        StmlState base = stml_block(state, w, {});

        StmlState pert_ref = state;
        const std::size_t j = static_cast<std::size_t>(trial) % 3;
        pert_ref.references[j].tokens =
            add(pert_ref.references[j].tokens, random_normal({5, 8}, rng, 0.4));
        StmlState out_ref = stml_block(pert_ref, w, {});
        for (std::size_t i = 0; i < 3; ++i)
            if (i != j)
                isolation = isolation &&
                            bit_equal(out_ref.references[i].tokens, base.references[i].tokens);
        isolation = isolation && bit_equal(out_ref.objects.vectors, base.objects.vectors);

        StmlState pert_test = state;
        pert_test.test.tokens = add(pert_test.test.tokens, random_normal({5, 8}, rng, 0.4));
        StmlState out_test = stml_block(pert_test, w, {});
        for (std::size_t i = 0; i < 3; ++i)
            direction = direction &&
                        bit_equal(out_test.references[i].tokens, base.references[i].tokens);
        direction = direction && bit_equal(out_test.objects.vectors, base.objects.vectors);
    }
    report(2, "perturbing reference j changes no other reference or object (exact zero)",
           isolation);
    report(2, "perturbing the test stream changes no reference or object (exact zero)", direction);
}

TEST_CASE("criterion 3: gradient checks against central differences") {
    const auto t0 = std::chrono::steady_clock::now();
    const double h = 1e-5;

    // one STML block
    double worst_block = 0.0;
    {
        Rng rng(0xC3);
        const std::size_t tokens = 4, channels = 8, heads = 2;
        StmlBlockWeights w = make_stml_block_weights(channels, heads, rng);
        StmlState state = random_state(2, 2, tokens, channels, rng);
        const Tensor rt = random_normal({tokens, channels}, rng);
        const Tensor ro = random_normal({2, channels}, rng);
        std::vector<Tensor> leaves{state.test.tokens,  state.references[0].tokens,
                                   state.references[1].tokens, state.objects.vectors,
                                   w.wq,    w.wk,    w.wv,    w.wo,
                                   w.ln1_gamma, w.ln1_beta, w.ln2_gamma, w.ln2_beta,
                                   w.ffn_w1, w.ffn_b1, w.ffn_w2, w.ffn_b2};
        auto trace = [&](Tape& tape, const std::vector<Tensor>& lv) {
            StmlStateVar sv;
            sv.test = tape.leaf(lv[0]);
            sv.references = {tape.leaf(lv[1]), tape.leaf(lv[2])};
            sv.objects = tape.leaf(lv[3]);
            StmlWeightsVar wv;
            wv.wq = tape.leaf(lv[4]);
            wv.wk = tape.leaf(lv[5]);
            wv.wv = tape.leaf(lv[6]);
            wv.wo = tape.leaf(lv[7]);
            wv.ln1_gamma = tape.leaf(lv[8]);
            wv.ln1_beta = tape.leaf(lv[9]);
            wv.ln2_gamma = tape.leaf(lv[10]);
            wv.ln2_beta = tape.leaf(lv[11]);
            wv.ffn_w1 = tape.leaf(lv[12]);
            wv.ffn_b1 = tape.leaf(lv[13]);
            wv.ffn_w2 = tape.leaf(lv[14]);
            wv.ffn_b2 = tape.leaf(lv[15]);
            wv.heads = heads;
            StmlStateVar out = stml_block_var(sv, wv, {});
            Var loss = ad_add(ad_mean(ad_mul(out.test, tape.leaf(rt))),
                              ad_mean(ad_mul(out.objects, tape.leaf(ro))));
            struct R {
                Var loss;
                std::vector<Var> vars;
            };
            return R{loss, {sv.test, sv.references[0], sv.references[1], sv.objects, wv.wq, wv.wk,
                            wv.wv, wv.wo, wv.ln1_gamma, wv.ln1_beta, wv.ln2_gamma, wv.ln2_beta,
                            wv.ffn_w1, wv.ffn_b1, wv.ffn_w2, wv.ffn_b2}};
        };
        auto f = [&trace](const std::vector<Tensor>& lv) {
            Tape tape;
            return tape.value(trace(tape, lv).loss)[0];
        };
        Tape tape;
        auto out = trace(tape, leaves);
        tape.backward(out.loss);
        std::vector<std::pair<std::size_t, std::size_t>> coords;
        std::uniform_int_distribution<std::size_t> leaf_d(0, leaves.size() - 1);
        for (int i = 0; i < 32; ++i) {
            const std::size_t leaf = leaf_d(rng);
            std::uniform_int_distribution<std::size_t> elem_d(0, leaves[leaf].size() - 1);
            coords.emplace_back(leaf, elem_d(rng));
        }
        const auto fd = oracle::central_difference(f, leaves, coords, h);
        for (std::size_t i = 0; i < coords.size(); ++i) {
            const auto [leaf, elem] = coords[i];
            worst_block =
                std::max(worst_block, oracle::relative_error(tape.grad(out.vars[leaf])[elem], fd[i]));
        }
    }
    report(3, "stml_block gradients (32 coordinates, rel err < 1e-5)", worst_block < 1e-5);

    // dice loss
    Rng rng2(0xC3C3);
    double worst_dice = 0.0;
    {
        Tensor probs = random_uniform({6, 6}, rng2, 0.1, 0.9);
        Tensor gt({6, 6});
        for (std::size_t i = 0; i < 36; ++i) gt[i] = std::uniform_int_distribution<int>(0, 1)(rng2);
        auto f = [&gt](const std::vector<Tensor>& lv) {
            Tape tape;
            return tape.value(dice_loss_var(tape.leaf(lv[0]), gt))[0];
        };
        Tape tape;
        Var p = tape.leaf(probs);
        tape.backward(dice_loss_var(p, gt));
        std::vector<std::pair<std::size_t, std::size_t>> coords;
        for (std::size_t i = 0; i < 36; ++i) coords.emplace_back(0, i);
        const auto fd = oracle::central_difference(f, {probs}, coords, h);
        for (std::size_t i = 0; i < 36; ++i)
            worst_dice = std::max(worst_dice, oracle::relative_error(tape.grad(p)[i], fd[i]));
    }
    report(3, "dice_loss gradients (36 coordinates, rel err < 1e-5)", worst_dice < 1e-5);

    // bootstrapped CE and combined loss on an 8x8 instance
    double worst_ce = 0.0, worst_comb = 0.0;
    {
        TargetMasks gt = TargetMasks::background(8, 8);
        for (std::size_t i = 0; i < 64; ++i)
            gt.ids[i] = std::uniform_int_distribution<int>(0, 2)(rng2);
        Tensor probs = random_uniform({3, 64}, rng2, 0.1, 1.0);
        for (std::size_t p = 0; p < 64; ++p) {
            const double s = probs[p] + probs[64 + p] + probs[128 + p];
            for (std::size_t j = 0; j < 3; ++j) probs[j * 64 + p] /= s;
        }
        for (int which = 0; which < 2; ++which) {
            auto f = [&gt, which](const std::vector<Tensor>& lv) {
                Tape tape;
                Var p = tape.leaf(lv[0]);
                return tape.value(which == 0 ? bootstrapped_ce_var(p, gt, 0.25)
                                             : combined_loss_var(p, gt, 0.25))[0];
            };
            Tape tape;
            Var p = tape.leaf(probs);
            tape.backward(which == 0 ? bootstrapped_ce_var(p, gt, 0.25)
                                     : combined_loss_var(p, gt, 0.25));
            std::vector<std::pair<std::size_t, std::size_t>> coords;
            std::uniform_int_distribution<std::size_t> d(0, probs.size() - 1);
            for (int i = 0; i < 32; ++i) coords.emplace_back(0, d(rng2));
            const auto fd = oracle::central_difference(f, {probs}, coords, h);
            for (std::size_t i = 0; i < coords.size(); ++i) {
                const double rel =
                    oracle::relative_error(tape.grad(p)[coords[i].second], fd[i]);
                (which == 0 ? worst_ce : worst_comb) =
                    std::max(which == 0 ? worst_ce : worst_comb, rel);
            }
        }
    }
    report(3, "bootstrapped_ce gradients (32 coordinates, rel err < 1e-5)", worst_ce < 1e-5);
    report(3, "combined_loss gradients (32 coordinates, rel err < 1e-5)", worst_comb < 1e-5);
    report(3, "runtime under 60 s", seconds_since(t0) < 60.0);
}

TEST_CASE("criterion 4: LFU/FIFO policies match the reference simulator") {
    bool trace_ok = true;
    for (bool pin : {false, true}) {
        Rng rng(pin ? 0xC4A : 0xC4B);
        TemporalMemory mem(4, pin);
        oracle::LfuSimulator sim(4, pin);
        std::size_t frame = 0;
        for (int op = 0; op < 1000; ++op) {
            if (std::uniform_int_distribution<int>(0, 9)(rng) < 6 || mem.size() == 0) {
                auto got = mem.insert(frame, Tensor::zeros({1, 2}), Tensor::zeros({1, 1, 2}));
                auto want = sim.insert(frame);
                trace_ok = trace_ok && got == want;
                ++frame;
            } else {
                std::uniform_int_distribution<std::size_t> pos_d(0, mem.size() - 1);
                const std::size_t pos = pos_d(rng);
                const double amt = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
                UsageUpdate up;
                up.increments.assign(mem.size(), 0.0);
                up.increments[pos] = amt;
                mem.touch(up);
                sim.touch(pos, amt);
            }
            trace_ok = trace_ok && mem.size() == sim.size() && mem.size() <= 4;
            for (std::size_t i = 0; i < mem.size() && trace_ok; ++i)
                trace_ok = trace_ok && mem.entries()[i].frame_index == sim.entries()[i].first &&
                           mem.entries()[i].usage == sim.entries()[i].second;
        }
    }
    report(4, "1000-op randomized traces reproduce the simulator's eviction sequence", trace_ok);

    SpatialMemory smem(4, 3);
    bool pin_ok = true;
    for (std::size_t idx = 0; idx <= 100000; ++idx) {
        smem.insert(idx, FeatureMap{Tensor::zeros({1, 2}), 1, 1}, Frame::zeros(8, 8));
        pin_ok = pin_ok && smem.stored_indices().front() == 0 && smem.size() <= 4;
    }
    report(4, "pinned first frame survives 1e5 insertions; capacities never exceeded", pin_ok);
}

TEST_CASE("criterion 5: metric identities are exact") {
    Rng rng(0xC5);
    TargetMasks m = TargetMasks::background(16, 16);
    for (auto& id : m.ids) id = std::uniform_int_distribution<int>(0, 2)(rng);
    bool ok = region_similarity_j(m, m, 1) == 1.0 && contour_accuracy_f(m, m, 1) == 1.0;

    TargetMasks a = TargetMasks::background(20, 20), b = TargetMasks::background(20, 20);
    for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
            a.at(y, x) = 1;
            b.at(y + 10, x + 10) = 1;
        }
    ok = ok && region_similarity_j(a, b, 1) == 0.0;
    ok = ok && contour_accuracy_f(TargetMasks::background(20, 20), a, 1) == 0.0;

    TargetMasks sq = TargetMasks::background(32, 32), sh = TargetMasks::background(32, 32);
    for (std::size_t y = 0; y < 10; ++y)
        for (std::size_t x = 0; x < 10; ++x) {
            sq.at(y + 5, x + 5) = 1;
            sh.at(y + 5, x + 10) = 1;
        }
    ok = ok && region_similarity_j(sq, sh, 1) == 50.0 / 150.0;

    std::vector<FrameEval> recs{{0, 1, 0.5, 0.25}, {1, 1, 0.75, 1.0}, {2, 1, 0.0, 0.5}};
    const EvalSummary s = summarize(recs);
    ok = ok && s.jf == (s.mean_j + s.mean_f) / 2.0;
    report(5, "J/F identities: 1.0 identical, 0.0 disjoint/empty, 1/3 half-overlap, J&F mean", ok);
}

TEST_CASE("criterion 6: target permutation equivariance on a 10-frame sequence") {
    SyntheticSequence seq = desk_sequence(10, 3, 0xC6);
    ModelConfig cfg;
    cfg.seed = 0xC6C6;
    const ModelWeights w = init_model_weights(cfg);

    const int perm[4] = {0, 2, 3, 1};
    TargetMasks permuted0 = seq.masks[0];
    for (auto& id : permuted0.ids) id = perm[id];

    Segmenter base(cfg, w), mapped(cfg, w);
    base.initialize(seq.frames[0], seq.masks[0]);
    mapped.initialize(seq.frames[0], permuted0);
    bool ok = true;
    for (std::size_t k = 1; k < 10; ++k) {
        const TargetMasks mb = base.step(seq.frames[k]).masks;
        const TargetMasks mm = mapped.step(seq.frames[k]).masks;
        for (std::size_t p = 0; p < mb.ids.size(); ++p) ok = ok && perm[mb.ids[p]] == mm.ids[p];
    }
    report(6, "permuting target IDs at initialization permutes outputs exactly", ok);
}

TEST_CASE("criterion 7: 20-frame end-to-end smoke at desk configuration") {
    const auto t0 = std::chrono::steady_clock::now();
    SyntheticSequence seq = desk_sequence(20, 2, 0xC7);
    ModelConfig cfg;  // 64x64, C=64, 2 blocks, m_max=4, T_max=8
    cfg.seed = 0xC7C7;
    Segmenter seg(cfg, init_model_weights(cfg));
    seg.initialize(seq.frames[0], seq.masks[0]);
    bool ok = true;
    for (std::size_t k = 1; k < 20; ++k) {
        const StepResult res = seg.step(seq.frames[k]);
        for (int id : res.masks.ids) ok = ok && id >= 0 && id <= 2;
        ok = ok && res.probabilities.all_finite();
        ok = ok && seg.spatial().size() <= cfg.spatial_capacity;
        ok = ok && seg.temporal().size() <= cfg.temporal_capacity;
        ok = ok && seg.spatial().stored_indices().front() == 0;
        bool first = false;
        for (const auto& e : seg.temporal().entries()) first = first || e.frame_index == 0;
        ok = ok && first;
    }
    const double elapsed = seconds_since(t0);
    report(7, "20-frame run: masks valid, memory invariants hold every frame", ok);
    report(7, "runtime under 2 minutes", elapsed < 120.0);
}

TEST_CASE("criterion 8: ablation switches execute; no_object equals the masking oracle") {
    SyntheticSequence seq = desk_sequence(3, 2, 0xC8);
    bool modes_ok = true;
    for (StmlMode mode : {StmlMode::NoObject, StmlMode::NoSpatial, StmlMode::Joint}) {
        ModelConfig cfg;
        cfg.seed = 0xC8C8;
        cfg.mode = mode;
        Segmenter seg(cfg, init_model_weights(cfg));
        seg.initialize(seq.frames[0], seq.masks[0]);
        for (std::size_t k = 1; k < 3; ++k) {
            const StepResult res = seg.step(seq.frames[k]);
            for (int id : res.masks.ids) modes_ok = modes_ok && id >= 0 && id <= 2;
            modes_ok = modes_ok && res.probabilities.all_finite();
        }
    }
    report(8, "modes no_object / no_spatial / joint execute with valid outputs", modes_ok);

    Rng rng(0xC8A);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2, m = 2, tokens = 4;
        StmlState state = random_state(n, m, tokens, 8, rng);
        StmlBlockWeights w = make_stml_block_weights(8, 2, rng);
        StmlState out = stml_block(state, w, {StmlMode::NoObject, true});
        VisibilityMask mask = asymmetric_visibility(n, m, tokens);
        for (std::size_t i = n; i < mask.rows; ++i)
            for (std::size_t j = 0; j < n; ++j) mask.set(i, j, false);
        StmlState oracle_out = joint_attention_oracle(state, w, mask);
        worst = std::max(worst, max_abs_diff(out.test.tokens, oracle_out.test.tokens));
        for (std::size_t i = 0; i < m; ++i)
            worst = std::max(worst,
                             max_abs_diff(out.references[i].tokens, oracle_out.references[i].tokens));
    }
    report(8, "no_object equals the object-masked joint oracle within 1e-10", worst < 1e-10);
}

TEST_CASE("criterion 9: CLI determinism and verify exit codes") {
    const char* cli = std::getenv("STMA_CLI");
    REQUIRE_MESSAGE(cli != nullptr, "STMA_CLI must point at the stma binary (set by ctest)");
    const fs::path work = fs::temp_directory_path() / "stma_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);
    const std::string q = "\"" + std::string(cli) + "\"";

    auto sh = [&](const std::string& cmd) { return std::system(cmd.c_str()); };
    REQUIRE(sh(q + " synth --out " + (work / "seq").string() + " --length 8 --targets 2 --seed 21 > /dev/null") == 0);
    REQUIRE(sh(q + " run --sequence " + (work / "seq/manifest.txt").string() + " --out " +
               (work / "run1").string() + " > /dev/null") == 0);
    REQUIRE(sh(q + " run --sequence " + (work / "seq/manifest.txt").string() + " --out " +
               (work / "run2").string() + " > /dev/null") == 0);

    bool identical = true;
    std::size_t compared = 0;
    for (const auto& e : fs::directory_iterator(work / "run1")) {
        if (e.path().extension() != ".pgm") continue;
        const auto a = read_file_bytes(e.path().string());
        const auto b = read_file_bytes((work / "run2" / e.path().filename()).string());
        identical = identical && a == b;
        ++compared;
    }
    report(9, "run twice with the same seed produces bit-identical mask files",
           identical && compared == 8);

    const int clean = sh(q + " verify --seed 777 > /dev/null 2>&1");
    const int faulty = sh(q + " verify --seed 777 --inject-fault break-mask > /dev/null 2>&1");
    report(9, "verify exits 0 on a clean build", clean == 0);
    report(9, "verify exits nonzero under the injected-fault negative control", faulty != 0);
    fs::remove_all(work);
}
