#pragma once

#include "stma/autodiff.hpp"
#include "stma/embed.hpp"
#include "stma/rng.hpp"
#include "stma/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace stma {

// One summary vector per target, row 0 = target ID 1.
struct ObjectFeatures {
    Tensor vectors;  // {n, C}
    std::size_t count() const { return vectors.rows(); }
};

// Per-block parameters. The q/k/v projections are shared by all three
// input streams of the block.
struct StmlBlockWeights {
    Tensor wq, wk, wv, wo;  // {C, C}
    Tensor ln1_gamma, ln1_beta;
    Tensor ln2_gamma, ln2_beta;  // {C}
    Tensor ffn_w1, ffn_b1;       // {C, 4C}, {1, 4C}
    Tensor ffn_w2, ffn_b2;       // {4C, C}, {1, C}
    std::size_t heads = 4;

    std::size_t channels() const { return wq.rows(); }
    std::size_t head_dim() const { return wq.cols() / heads; }
};

struct StmlState {
    FeatureMap test;
    std::vector<FeatureMap> references;
    ObjectFeatures objects;
};

enum class StmlMode { Full, NoObject, NoSpatial, Joint };

StmlMode stml_mode_from_string(const std::string& s);
const char* to_string(StmlMode mode);

struct StmlOptions {
    StmlMode mode = StmlMode::Full;
    // When false, object features are re-injected constants: blocks read them
    // but never write them back.
    bool update_objects = true;
};

StmlBlockWeights make_stml_block_weights(std::size_t channels, std::size_t heads, Rng& rng);
std::vector<StmlBlockWeights> make_stml_weights(std::size_t channels, std::size_t heads,
                                                std::size_t blocks, Rng& rng);

// Weight persistence: one tensor file per parameter plus a manifest listing
// blocks, heads, channels.
void save_stml_weights(const std::string& dir, const std::vector<StmlBlockWeights>& weights);
std::vector<StmlBlockWeights> load_stml_weights(const std::string& dir);

// --- tape-level building blocks ----------------------------------------

struct StmlWeightsVar {
    Var wq, wk, wv, wo;
    Var ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    std::size_t heads = 0;
};

StmlWeightsVar lift_weights(Tape& tape, const StmlBlockWeights& w);

// Multi-head attention: queries from `queries`, keys/values from the
// concatenation of `kv_parts`, all projected with the shared weights.
// `part_logit_offsets` (one per part, default 0) shifts that part's logits;
// tests use it to push a stream out of the softmax.
// When `out_attention` is given it receives the per-head softmax weights.
Var mha_var(Var queries, const std::vector<Var>& kv_parts, const StmlWeightsVar& w,
            const std::vector<double>& part_logit_offsets = {},
            std::vector<Var>* out_attention = nullptr);

struct StmlStateVar {
    Var test;
    std::vector<Var> references;
    Var objects;
};

StmlStateVar stml_block_var(const StmlStateVar& state, const StmlWeightsVar& w,
                            const StmlOptions& opts);

// --- plain operation surface --------------------------------------------

// Eq.-style self-attention over the object rows (projection included).
ObjectFeatures object_self_attention(const ObjectFeatures& objects, const StmlBlockWeights& w);

// Asymmetric attention of one reference: queries from ref, keys/values from
// ref plus objects. Other references are never visible.
// `object_logit_offset` is the test hook shifting the object-stream logits.
FeatureMap reference_object_enhancement(const FeatureMap& ref, const ObjectFeatures& objects,
                                        const StmlBlockWeights& w,
                                        double object_logit_offset = 0.0);

// Queries from test, keys/values over [test, ref_1, ..., ref_m]. An empty
// reference list degenerates to self-attention of the test map.
FeatureMap test_reference_correlation(const FeatureMap& test,
                                      const std::vector<FeatureMap>& references,
                                      const StmlBlockWeights& w);

// The block's feed-forward stage on one stream: x + FFN(LN2(x)), with the
// exact arithmetic of the tape path so manual composition is bit-identical.
Tensor stml_ffn_residual(const Tensor& x, const StmlBlockWeights& w);

// One pre-LN transformer block over the three streams.
StmlState stml_block(const StmlState& state, const StmlBlockWeights& w,
                     const StmlOptions& opts = {});

StmlState stml_forward(const StmlState& state, const std::vector<StmlBlockWeights>& weights,
                       const StmlOptions& opts = {});

// --- joint-attention reference -----------------------------------------
// Verification-only path: a single dense attention over all rows with an
// explicit visibility matrix. Independent of the decomposed implementation.

// Row layout of the joint matrix: objects (n), then each reference (N rows
// apiece), then test (N rows).
struct VisibilityMask {
    std::size_t rows = 0;
    std::vector<std::uint8_t> visible;  // rows x rows, row-major

    bool at(std::size_t i, std::size_t j) const { return visible[i * rows + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { visible[i * rows + j] = v ? 1 : 0; }
    static VisibilityMask all(std::size_t rows, bool v);
};

// objects see objects; ref_i sees ref_i + objects; test sees test + all refs.
VisibilityMask asymmetric_visibility(std::size_t n_objects, std::size_t n_refs,
                                     std::size_t tokens);

StmlState joint_attention_oracle(const StmlState& state, const StmlBlockWeights& w,
                                 const VisibilityMask& visibility, bool update_objects = true);

}  // namespace stma
