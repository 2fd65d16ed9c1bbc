#include "stma/stml.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

namespace stma {

StmlMode stml_mode_from_string(const std::string& s) {
    if (s == "full") return StmlMode::Full;
    if (s == "no_object") return StmlMode::NoObject;
    if (s == "no_spatial") return StmlMode::NoSpatial;
    if (s == "joint") return StmlMode::Joint;
    throw ContractError("unknown stml mode: " + s);
}

const char* to_string(StmlMode mode) {
    switch (mode) {
        case StmlMode::Full: return "full";
        case StmlMode::NoObject: return "no_object";
        case StmlMode::NoSpatial: return "no_spatial";
        case StmlMode::Joint: return "joint";
    }
    return "?";
}

StmlBlockWeights make_stml_block_weights(std::size_t channels, std::size_t heads, Rng& rng) {
    if (channels % heads != 0)
        throw ContractError("channels " + std::to_string(channels) + " not divisible by heads " +
                            std::to_string(heads));
    const double ws = 1.0 / std::sqrt(static_cast<double>(channels));
    StmlBlockWeights w;
    w.wq = random_normal({channels, channels}, rng, ws);
    w.wk = random_normal({channels, channels}, rng, ws);
    w.wv = random_normal({channels, channels}, rng, ws);
    w.wo = random_normal({channels, channels}, rng, ws);
    w.ln1_gamma = Tensor::full({channels}, 1.0);
    w.ln1_beta = Tensor::zeros({channels});
    w.ln2_gamma = Tensor::full({channels}, 1.0);
    w.ln2_beta = Tensor::zeros({channels});
    w.ffn_w1 = random_normal({channels, 4 * channels}, rng, ws);
    w.ffn_b1 = Tensor::zeros({1, 4 * channels});
    w.ffn_w2 = random_normal({4 * channels, channels}, rng,
                             1.0 / std::sqrt(static_cast<double>(4 * channels)));
    w.ffn_b2 = Tensor::zeros({1, channels});
    w.heads = heads;
    return w;
}

std::vector<StmlBlockWeights> make_stml_weights(std::size_t channels, std::size_t heads,
                                                std::size_t blocks, Rng& rng) {
    std::vector<StmlBlockWeights> out;
    out.reserve(blocks);
    for (std::size_t b = 0; b < blocks; ++b) out.push_back(make_stml_block_weights(channels, heads, rng));
    return out;
}

namespace {

const char* kParamNames[] = {"wq",        "wk",      "wv",      "wo",      "ln1_gamma",
                             "ln1_beta",  "ln2_gamma", "ln2_beta", "ffn_w1", "ffn_b1",
                             "ffn_w2",    "ffn_b2"};

std::vector<Tensor*> param_slots(StmlBlockWeights& w) {
    return {&w.wq,        &w.wk,      &w.wv,      &w.wo,      &w.ln1_gamma,
            &w.ln1_beta,  &w.ln2_gamma, &w.ln2_beta, &w.ffn_w1, &w.ffn_b1,
            &w.ffn_w2,    &w.ffn_b2};
}

}  // namespace

void save_stml_weights(const std::string& dir, const std::vector<StmlBlockWeights>& weights) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    if (weights.empty()) throw ContractError("cannot save empty weight stack");
    std::ofstream manifest(dir + "/manifest.txt");
    manifest << "blocks=" << weights.size() << "\n"
             << "heads=" << weights.front().heads << "\n"
             << "channels=" << weights.front().channels() << "\n";
    for (std::size_t b = 0; b < weights.size(); ++b) {
        StmlBlockWeights w = weights[b];
        auto slots = param_slots(w);
        for (std::size_t p = 0; p < slots.size(); ++p)
            save_tensor(dir + "/block" + std::to_string(b) + "_" + kParamNames[p] + ".stma",
                        *slots[p]);
    }
}

std::vector<StmlBlockWeights> load_stml_weights(const std::string& dir) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw std::runtime_error("missing weight manifest in " + dir);
    std::size_t blocks = 0, heads = 0, channels = 0;
    std::string line;
    while (std::getline(manifest, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::size_t val = std::stoul(line.substr(eq + 1));
        if (key == "blocks") blocks = val;
        else if (key == "heads") heads = val;
        else if (key == "channels") channels = val;
    }
    if (blocks == 0 || heads == 0 || channels == 0)
        throw std::runtime_error("incomplete weight manifest in " + dir);
    std::vector<StmlBlockWeights> out(blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
        out[b].heads = heads;
        auto slots = param_slots(out[b]);
        for (std::size_t p = 0; p < slots.size(); ++p)
            *slots[p] = load_tensor(dir + "/block" + std::to_string(b) + "_" + kParamNames[p] +
                                    ".stma");
        if (out[b].channels() != channels)
            throw std::runtime_error("weight tensor channels disagree with manifest in " + dir);
    }
    return out;
}

StmlWeightsVar lift_weights(Tape& tape, const StmlBlockWeights& w) {
    StmlWeightsVar v;
    v.wq = tape.leaf(w.wq);
    v.wk = tape.leaf(w.wk);
    v.wv = tape.leaf(w.wv);
    v.wo = tape.leaf(w.wo);
    v.ln1_gamma = tape.leaf(w.ln1_gamma);
    v.ln1_beta = tape.leaf(w.ln1_beta);
    v.ln2_gamma = tape.leaf(w.ln2_gamma);
    v.ln2_beta = tape.leaf(w.ln2_beta);
    v.ffn_w1 = tape.leaf(w.ffn_w1);
    v.ffn_b1 = tape.leaf(w.ffn_b1);
    v.ffn_w2 = tape.leaf(w.ffn_w2);
    v.ffn_b2 = tape.leaf(w.ffn_b2);
    v.heads = w.heads;
    return v;
}

namespace {

// x + bias broadcast over rows, expressed with existing primitives so the
// bias gradient falls out of the matmul backward.
Var add_bias_rows(Var x, Var bias_row) {
    Tape* tape = x.tape;
    const std::size_t rows = tape->value(x).rows();
    Var ones = tape->leaf(Tensor::full({rows, 1}, 1.0));
    return ad_add(x, ad_matmul(ones, bias_row));
}

Var ffn_residual_var(Var x, const StmlWeightsVar& w) {
    Var h = ad_matmul(ad_layernorm(x, w.ln2_gamma, w.ln2_beta), w.ffn_w1);
    h = ad_relu(add_bias_rows(h, w.ffn_b1));
    Var out = add_bias_rows(ad_matmul(h, w.ffn_w2), w.ffn_b2);
    return ad_add(x, out);
}

}  // namespace

Var mha_var(Var queries, const std::vector<Var>& kv_parts, const StmlWeightsVar& w,
            const std::vector<double>& part_logit_offsets, std::vector<Var>* out_attention) {
    if (kv_parts.empty()) throw ContractError("mha_var requires at least one key/value part");
    if (!part_logit_offsets.empty() && part_logit_offsets.size() != kv_parts.size())
        throw ContractError("mha_var expects one logit offset per kv part");
    Tape* tape = queries.tape;
    const std::size_t channels = tape->value(w.wq).cols();
    if (channels % w.heads != 0) throw ContractError("head count does not divide channels");
    const std::size_t d = channels / w.heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Var q = ad_matmul(queries, w.wq);
    std::vector<Var> ks, vs;
    ks.reserve(kv_parts.size());
    vs.reserve(kv_parts.size());
    for (Var p : kv_parts) {
        ks.push_back(ad_matmul(p, w.wk));
        vs.push_back(ad_matmul(p, w.wv));
    }
    Var k = ks.size() == 1 ? ks.front() : ad_concat_rows(ks);
    Var v = vs.size() == 1 ? vs.front() : ad_concat_rows(vs);

    Var offsets{};
    bool have_offsets = false;
    if (!part_logit_offsets.empty()) {
        for (double o : part_logit_offsets) have_offsets = have_offsets || o != 0.0;
        if (have_offsets) {
            const std::size_t nq = tape->value(queries).rows();
            const std::size_t nk = tape->value(k).rows();
            Tensor off({nq, nk});
            std::size_t col = 0;
            for (std::size_t p = 0; p < kv_parts.size(); ++p) {
                const std::size_t pn = tape->value(kv_parts[p]).rows();
                for (std::size_t i = 0; i < nq; ++i)
                    for (std::size_t j = 0; j < pn; ++j) off[i * nk + col + j] = part_logit_offsets[p];
                col += pn;
            }
            offsets = tape->leaf(std::move(off));
        }
    }

    std::vector<Var> head_outs;
    head_outs.reserve(w.heads);
    for (std::size_t h = 0; h < w.heads; ++h) {
        Var qh = ad_slice_cols(q, h * d, (h + 1) * d);
        Var kh = ad_slice_cols(k, h * d, (h + 1) * d);
        Var vh = ad_slice_cols(v, h * d, (h + 1) * d);
        Var logits = ad_scale(ad_matmul(qh, ad_transpose(kh)), inv_sqrt_d);
        if (have_offsets) logits = ad_add(logits, offsets);
        Var alpha = ad_softmax_rows(logits);
        if (out_attention) out_attention->push_back(alpha);
        head_outs.push_back(ad_attend(alpha, vh));
    }
    Var cat = head_outs.size() == 1 ? head_outs.front() : ad_concat_cols(head_outs);
    return ad_matmul(cat, w.wo);
}

StmlStateVar stml_block_var(const StmlStateVar& state, const StmlWeightsVar& w,
                            const StmlOptions& opts) {
    Tape* tape = state.test.tape;
    const std::size_t m = state.references.size();
    const bool have_objects = state.objects.tape != nullptr && !tape->value(state.objects).empty();

    if ((opts.mode == StmlMode::Full || opts.mode == StmlMode::NoSpatial ||
         opts.mode == StmlMode::Joint) &&
        !have_objects)
        throw ContractError(std::string("mode ") + to_string(opts.mode) +
                            " requires object features");
    if (opts.mode == StmlMode::Joint && m == 0)
        throw ContractError("mode joint requires at least one reference");

    auto ln1 = [&](Var x) { return ad_layernorm(x, w.ln1_gamma, w.ln1_beta); };

    Var test_n = ln1(state.test);
    std::vector<Var> refs_n;
    refs_n.reserve(m);
    for (Var r : state.references) refs_n.push_back(ln1(r));
    Var objects_n{};
    if (have_objects) objects_n = ln1(state.objects);

    StmlStateVar out;
    out.objects = state.objects;
    out.references = state.references;
    out.test = state.test;

    const bool touch_objects = have_objects && opts.update_objects &&
                               (opts.mode == StmlMode::Full || opts.mode == StmlMode::NoSpatial ||
                                opts.mode == StmlMode::Joint);

    switch (opts.mode) {
        case StmlMode::Full: {
            Var a_o = mha_var(objects_n, {objects_n}, w);
            if (touch_objects) out.objects = ad_add(state.objects, a_o);
            for (std::size_t i = 0; i < m; ++i) {
                Var a_r = mha_var(refs_n[i], {refs_n[i], objects_n}, w);
                out.references[i] = ad_add(state.references[i], a_r);
            }
            std::vector<Var> kv{test_n};
            kv.insert(kv.end(), refs_n.begin(), refs_n.end());
            out.test = ad_add(state.test, mha_var(test_n, kv, w));
            break;
        }
        case StmlMode::NoObject: {
            for (std::size_t i = 0; i < m; ++i) {
                Var a_r = mha_var(refs_n[i], {refs_n[i]}, w);
                out.references[i] = ad_add(state.references[i], a_r);
            }
            std::vector<Var> kv{test_n};
            kv.insert(kv.end(), refs_n.begin(), refs_n.end());
            out.test = ad_add(state.test, mha_var(test_n, kv, w));
            break;
        }
        case StmlMode::NoSpatial: {
            Var a_o = mha_var(objects_n, {objects_n}, w);
            if (touch_objects) out.objects = ad_add(state.objects, a_o);
            out.test = ad_add(state.test, mha_var(test_n, {test_n}, w));
            break;
        }
        case StmlMode::Joint: {
            std::vector<Var> parts{objects_n};
            parts.insert(parts.end(), refs_n.begin(), refs_n.end());
            parts.push_back(test_n);
            Var all = ad_concat_rows(parts);
            Var a = mha_var(all, {all}, w);
            const std::size_t n = tape->value(state.objects).rows();
            const std::size_t tokens = tape->value(state.test).rows();
            if (touch_objects) out.objects = ad_add(state.objects, ad_slice_rows(a, 0, n));
            for (std::size_t i = 0; i < m; ++i)
                out.references[i] = ad_add(state.references[i],
                                           ad_slice_rows(a, n + i * tokens, n + (i + 1) * tokens));
            out.test = ad_add(state.test,
                              ad_slice_rows(a, n + m * tokens, n + (m + 1) * tokens));
            break;
        }
    }

    // Feed-forward stage; streams the mode left untouched stay untouched.
    if (touch_objects) out.objects = ffn_residual_var(out.objects, w);
    if (opts.mode != StmlMode::NoSpatial)
        for (auto& r : out.references) r = ffn_residual_var(r, w);
    out.test = ffn_residual_var(out.test, w);
    return out;
}

namespace {

struct LiftedState {
    Tape tape;
    StmlWeightsVar w;
    StmlStateVar state;
};

StmlStateVar lift_state(Tape& tape, const StmlState& state) {
    StmlStateVar sv;
    sv.test = tape.leaf(state.test.tokens);
    for (const auto& r : state.references) sv.references.push_back(tape.leaf(r.tokens));
    if (!state.objects.vectors.empty()) sv.objects = tape.leaf(state.objects.vectors);
    return sv;
}

StmlState extract_state(Tape& tape, const StmlStateVar& sv, const StmlState& like) {
    StmlState out;
    out.test = FeatureMap{tape.value(sv.test), like.test.grid_h, like.test.grid_w};
    for (std::size_t i = 0; i < sv.references.size(); ++i)
        out.references.push_back(FeatureMap{tape.value(sv.references[i]),
                                            like.references[i].grid_h, like.references[i].grid_w});
    if (sv.objects.tape != nullptr) out.objects = ObjectFeatures{tape.value(sv.objects)};
    return out;
}

}  // namespace

ObjectFeatures object_self_attention(const ObjectFeatures& objects, const StmlBlockWeights& w) {
    if (objects.count() == 0) throw ContractError("object_self_attention needs n >= 1");
    Tape tape;
    StmlWeightsVar wv = lift_weights(tape, w);
    Var o = tape.leaf(objects.vectors);
    Var out = mha_var(o, {o}, wv);
    return ObjectFeatures{tape.value(out)};
}

FeatureMap reference_object_enhancement(const FeatureMap& ref, const ObjectFeatures& objects,
                                        const StmlBlockWeights& w, double object_logit_offset) {
    if (objects.count() == 0) throw ContractError("reference_object_enhancement needs objects");
    if (ref.tokens.cols() != objects.vectors.cols())
        throw DimensionError("reference/object channel mismatch: " + shape_str(ref.tokens.shape()) +
                             " vs " + shape_str(objects.vectors.shape()));
    Tape tape;
    StmlWeightsVar wv = lift_weights(tape, w);
    Var r = tape.leaf(ref.tokens);
    Var o = tape.leaf(objects.vectors);
    Var out = mha_var(r, {r, o}, wv, {0.0, object_logit_offset});
    return FeatureMap{tape.value(out), ref.grid_h, ref.grid_w};
}

FeatureMap test_reference_correlation(const FeatureMap& test,
                                      const std::vector<FeatureMap>& references,
                                      const StmlBlockWeights& w) {
    Tape tape;
    StmlWeightsVar wv = lift_weights(tape, w);
    Var t = tape.leaf(test.tokens);
    std::vector<Var> kv{t};
    for (const auto& r : references) {
        if (r.tokens.cols() != test.tokens.cols() || r.tokens.rows() != test.tokens.rows())
            throw DimensionError("test/reference shape mismatch: " + shape_str(test.tokens.shape()) +
                                 " vs " + shape_str(r.tokens.shape()));
        kv.push_back(tape.leaf(r.tokens));
    }
    Var out = mha_var(t, kv, wv);
    return FeatureMap{tape.value(out), test.grid_h, test.grid_w};
}

Tensor stml_ffn_residual(const Tensor& x, const StmlBlockWeights& w) {
    Tape tape;
    StmlWeightsVar wv = lift_weights(tape, w);
    return tape.value(ffn_residual_var(tape.leaf(x), wv));
}

StmlState stml_block(const StmlState& state, const StmlBlockWeights& w, const StmlOptions& opts) {
    Tape tape;
    StmlWeightsVar wv = lift_weights(tape, w);
    StmlStateVar sv = lift_state(tape, state);
    StmlStateVar ov = stml_block_var(sv, wv, opts);
    return extract_state(tape, ov, state);
}

StmlState stml_forward(const StmlState& state, const std::vector<StmlBlockWeights>& weights,
                       const StmlOptions& opts) {
    if (weights.empty()) throw ContractError("stml_forward requires at least one block");
    StmlState cur = state;
    for (const auto& w : weights) cur = stml_block(cur, w, opts);
    return cur;
}

VisibilityMask VisibilityMask::all(std::size_t rows, bool v) {
    VisibilityMask mask;
    mask.rows = rows;
    mask.visible.assign(rows * rows, v ? 1 : 0);
    return mask;
}

VisibilityMask asymmetric_visibility(std::size_t n_objects, std::size_t n_refs,
                                     std::size_t tokens) {
    const std::size_t rows = n_objects + n_refs * tokens + tokens;
    VisibilityMask mask = VisibilityMask::all(rows, false);
    // objects -> objects
    for (std::size_t i = 0; i < n_objects; ++i)
        for (std::size_t j = 0; j < n_objects; ++j) mask.set(i, j, true);
    // ref_i -> ref_i + objects
    for (std::size_t r = 0; r < n_refs; ++r) {
        const std::size_t base = n_objects + r * tokens;
        for (std::size_t i = 0; i < tokens; ++i) {
            for (std::size_t j = 0; j < n_objects; ++j) mask.set(base + i, j, true);
            for (std::size_t j = 0; j < tokens; ++j) mask.set(base + i, base + j, true);
        }
    }
    // test -> test + all refs
    const std::size_t tbase = n_objects + n_refs * tokens;
    for (std::size_t i = 0; i < tokens; ++i) {
        for (std::size_t r = 0; r < n_refs; ++r)
            for (std::size_t j = 0; j < tokens; ++j) mask.set(tbase + i, n_objects + r * tokens + j, true);
        for (std::size_t j = 0; j < tokens; ++j) mask.set(tbase + i, tbase + j, true);
    }
    return mask;
}

StmlState joint_attention_oracle(const StmlState& state, const StmlBlockWeights& w,
                                 const VisibilityMask& visibility, bool update_objects) {
    const std::size_t n = state.objects.count();
    const std::size_t m = state.references.size();
    const std::size_t tokens = state.test.token_count();
    const std::size_t channels = state.test.channels();
    const std::size_t rows = n + m * tokens + tokens;
    if (visibility.rows != rows || visibility.visible.size() != rows * rows)
        throw ContractError("visibility mask is " + std::to_string(visibility.rows) +
                            " rows, expected " + std::to_string(rows));
    for (std::size_t i = 0; i < rows; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < rows && !any; ++j) any = visibility.at(i, j);
        if (!any) throw ContractError("visibility row " + std::to_string(i) + " sees nothing");
    }

    // Assemble the joint row matrix: objects, references, test.
    Tensor all({rows, channels});
    auto put_rows = [&](const Tensor& src, std::size_t row0) {
        std::copy(src.data().begin(), src.data().end(), all.data().begin() + row0 * channels);
    };
    if (n > 0) put_rows(state.objects.vectors, 0);
    for (std::size_t r = 0; r < m; ++r) put_rows(state.references[r].tokens, n + r * tokens);
    put_rows(state.test.tokens, n + m * tokens);

    Tensor normed = layernorm(all, w.ln1_gamma, w.ln1_beta);
    Tensor q = matmul(normed, w.wq);
    Tensor k = matmul(normed, w.wk);
    Tensor v = matmul(normed, w.wv);

    const std::size_t heads = w.heads;
    const std::size_t d = channels / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor attn({rows, channels});
    std::vector<double> logits(rows);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * d;
        for (std::size_t i = 0; i < rows; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < rows; ++j) {
                if (!visibility.at(i, j)) continue;
                double dot = 0.0;
                for (std::size_t t = 0; t < d; ++t)
                    dot += q[i * channels + c0 + t] * k[j * channels + c0 + t];
                logits[j] = dot * inv_sqrt_d;
                mx = std::max(mx, logits[j]);
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < rows; ++j)
                if (visibility.at(i, j)) denom += std::exp(logits[j] - mx);
            for (std::size_t t = 0; t < d; ++t) {
                double acc = 0.0;
                for (std::size_t j = 0; j < rows; ++j) {
                    if (!visibility.at(i, j)) continue;
                    acc += std::exp(logits[j] - mx) / denom * v[j * channels + c0 + t];
                }
                attn[i * channels + c0 + t] = acc;
            }
        }
    }
    Tensor stage1 = add(all, matmul(attn, w.wo));
    if (!update_objects && n > 0)
        std::copy(all.data().begin(), all.data().begin() + n * channels, stage1.data().begin());

    // Per-row feed-forward, written directly rather than via the block path.
    Tensor normed2 = layernorm(stage1, w.ln2_gamma, w.ln2_beta);
    Tensor h1 = matmul(normed2, w.ffn_w1);
    const std::size_t hidden = h1.cols();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < hidden; ++j) {
            double x = h1[i * hidden + j] + w.ffn_b1[j];
            h1[i * hidden + j] = x > 0.0 ? x : 0.0;
        }
    Tensor h2 = matmul(h1, w.ffn_w2);
    Tensor out = stage1;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < channels; ++j)
            out[i * channels + j] += h2[i * channels + j] + w.ffn_b2[j];
    if (!update_objects && n > 0)
        std::copy(all.data().begin(), all.data().begin() + n * channels, out.data().begin());

    StmlState result;
    if (n > 0) result.objects = ObjectFeatures{slice_rows(out, 0, n)};
    for (std::size_t r = 0; r < m; ++r)
        result.references.push_back(FeatureMap{slice_rows(out, n + r * tokens, n + (r + 1) * tokens),
                                               state.references[r].grid_h,
                                               state.references[r].grid_w});
    result.test = FeatureMap{slice_rows(out, n + m * tokens, rows), state.test.grid_h,
                             state.test.grid_w};
    return result;
}

}  // namespace stma
