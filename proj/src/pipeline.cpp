#include "stma/pipeline.hpp"

#include <cstdlib>
#include <fstream>

namespace stma {

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ContractError("config key " + key + " expects a boolean, got '" + v + "'");
}

}  // namespace

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig cfg;
    for (const auto& [key, value] : kv) {
        if (key == "patch_size") cfg.patch_size = std::stoul(value);
        else if (key == "channel_dim") cfg.channel_dim = std::stoul(value);
        else if (key == "value_channels") cfg.value_channels = std::stoul(value);
        else if (key == "skip_channels") cfg.skip_channels = std::stoul(value);
        else if (key == "heads") cfg.heads = std::stoul(value);
        else if (key == "blocks") cfg.blocks = std::stoul(value);
        else if (key == "spatial_capacity") cfg.spatial_capacity = std::stoul(value);
        else if (key == "temporal_capacity") cfg.temporal_capacity = std::stoul(value);
        else if (key == "insertion_stride") cfg.insertion_stride = std::stoul(value);
        else if (key == "frame_height") cfg.frame_height = std::stoul(value);
        else if (key == "frame_width") cfg.frame_width = std::stoul(value);
        else if (key == "keep_fraction") cfg.keep_fraction = std::stod(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "mode") cfg.mode = stml_mode_from_string(value);
        else if (key == "affinity") cfg.affinity = affinity_kind_from_string(value);
        else if (key == "update_objects") cfg.update_objects = parse_bool(value, key);
        else if (key == "temporal_key_post_stml") cfg.temporal_key_post_stml = parse_bool(value, key);
        else if (key == "pin_first_temporal") cfg.pin_first_temporal = parse_bool(value, key);
        else throw ContractError("unknown config key: " + key);
    }
    if (cfg.keep_fraction <= 0.0 || cfg.keep_fraction > 1.0)
        throw ContractError("keep_fraction must be in (0,1]");
    return cfg;
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractError("config line is not key=value: '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    ModelConfig cfg = model_config_from_kv(kv);
    apply_seed_env(cfg);
    return cfg;
}

void apply_seed_env(ModelConfig& cfg) {
    if (const char* env = std::getenv("STMA_SEED")) cfg.seed = std::stoull(env);
}

ModelWeights init_model_weights(const ModelConfig& cfg) {
    Rng rng(cfg.seed);
    ModelWeights w;
    w.embed = make_embed_config(cfg.patch_size, cfg.channel_dim, cfg.frame_height,
                                cfg.frame_width, rng);
    w.stem = make_conv_stem(cfg.skip_channels, cfg.skip_channels, rng);
    w.stml = make_stml_weights(cfg.channel_dim, cfg.heads, cfg.blocks, rng);
    w.id_encoder = make_id_encoder(cfg.value_channels, rng);
    w.object_projection =
        random_normal({cfg.value_channels, cfg.channel_dim}, rng,
                      1.0 / std::sqrt(static_cast<double>(cfg.value_channels)));
    w.decoder = make_decoder(cfg.value_channels, cfg.skip_channels, cfg.skip_channels, rng);
    return w;
}

Segmenter::Segmenter(ModelConfig cfg, ModelWeights weights)
    : cfg_(cfg),
      weights_(std::move(weights)),
      spatial_(cfg.spatial_capacity, cfg.insertion_stride),
      temporal_(cfg.temporal_capacity, cfg.pin_first_temporal) {}

void Segmenter::check_geometry(const Frame& frame) const {
    if (frame.height != cfg_.frame_height || frame.width != cfg_.frame_width)
        throw DimensionError("frame " + std::to_string(frame.height) + "x" +
                             std::to_string(frame.width) + " does not match configured " +
                             std::to_string(cfg_.frame_height) + "x" +
                             std::to_string(cfg_.frame_width));
}

void Segmenter::initialize(const Frame& frame0, const TargetMasks& masks0) {
    if (initialized_) throw ContractError("segmenter already initialized");
    check_geometry(frame0);
    targets_ = static_cast<std::size_t>(masks0.max_id());
    if (targets_ == 0) throw ContractError("first-frame masks name no targets");

    FeatureMap feat = embed(frame0, weights_.embed);
    spatial_.insert(0, feat, frame0);

    // Frame 0 cold start: zero object features stand in until the temporal
    // memory holds its first ID values.
    StmlState state{feat, spatial_.references(),
                    ObjectFeatures{Tensor::zeros({targets_, cfg_.channel_dim})}};
    StmlState out = stml_forward(state, weights_.stml, {cfg_.mode, cfg_.update_objects});

    Tensor key = cfg_.temporal_key_post_stml ? out.test.tokens : feat.tokens;
    Tensor values = encode_id_values(frame0, masks0, targets_, weights_.id_encoder);
    temporal_.insert(0, std::move(key), std::move(values));

    next_index_ = 1;
    initialized_ = true;
}

StepResult Segmenter::step(const Frame& frame) {
    if (!initialized_) throw ContractError("segmenter not initialized from frame 0");
    check_geometry(frame);
    const std::size_t index = next_index_++;

    FeatureMap feat = embed(frame, weights_.embed);
    SkipFeatures skips = conv_stem(frame, weights_.stem);

    ObjectFeatures objects = object_features_from_memory(temporal_, weights_.object_projection);
    StmlState state{feat, spatial_.references(), std::move(objects)};
    StmlState out = stml_forward(state, weights_.stml, {cfg_.mode, cfg_.update_objects});

    AffinityResult aff = affinity(out.test, temporal_, cfg_.affinity);
    temporal_.touch(aff.usage);
    ReadoutFeatures reads = readout(aff.affinity, temporal_, out.test.grid_h, out.test.grid_w);
    Tensor logits = decode(reads, skips, weights_.decoder);
    Aggregated agg = aggregate(logits);

    spatial_.insert(index, feat, frame);
    Tensor key = cfg_.temporal_key_post_stml ? out.test.tokens : feat.tokens;
    Tensor values = encode_id_values(frame, agg.masks, targets_, weights_.id_encoder);
    temporal_.insert(index, std::move(key), std::move(values));

    return StepResult{std::move(agg.masks), std::move(agg.probabilities), std::move(logits)};
}

}  // namespace stma
