#pragma once

#include "stma/embed.hpp"
#include "stma/idassoc.hpp"
#include "stma/image.hpp"
#include "stma/memory.hpp"
#include "stma/stml.hpp"

#include <map>
#include <string>

namespace stma {

// Desk-scale defaults: 64x64 frames, 16px patches, 64 channels, 2 blocks.
struct ModelConfig {
    std::size_t patch_size = 16;
    std::size_t channel_dim = 64;
    std::size_t value_channels = 32;
    std::size_t skip_channels = 32;
    std::size_t heads = 4;
    std::size_t blocks = 2;
    std::size_t spatial_capacity = 4;
    std::size_t temporal_capacity = 8;
    std::size_t insertion_stride = 3;
    std::size_t frame_height = 64;
    std::size_t frame_width = 64;
    double keep_fraction = 0.25;
    std::uint64_t seed = 1234;
    StmlMode mode = StmlMode::Full;
    AffinityKind affinity = AffinityKind::Dot;
    bool update_objects = true;
    // Open alternative: store the pre-STML embedding as the temporal key.
    bool temporal_key_post_stml = true;
    bool pin_first_temporal = true;
};

// Plain-text key=value config. Unknown keys are rejected so typos surface.
// STMA_SEED in the environment overrides the seed.
ModelConfig load_model_config(const std::string& path);
ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv);
void apply_seed_env(ModelConfig& cfg);

struct ModelWeights {
    EmbedConfig embed;
    ConvStemWeights stem;
    std::vector<StmlBlockWeights> stml;
    IdEncoderWeights id_encoder;
    Tensor object_projection;  // {Cv, C}
    DecoderWeights decoder;
};

ModelWeights init_model_weights(const ModelConfig& cfg);

struct StepResult {
    TargetMasks masks;
    Tensor probabilities;  // {n+1, H, W}
    Tensor logits;         // {n, H, W}
};

// Sequential per-video state machine around the full per-frame pipeline:
// embed -> object features -> STML -> affinity/readout -> decode ->
// aggregate -> memory updates.
class Segmenter {
public:
    Segmenter(ModelConfig cfg, ModelWeights weights);

    // Seeds both memories from the first frame and its ground-truth masks.
    void initialize(const Frame& frame0, const TargetMasks& masks0);

    // Segments the next frame and applies the memory update schedule.
    StepResult step(const Frame& frame);

    bool initialized() const { return initialized_; }
    std::size_t target_count() const { return targets_; }
    std::size_t next_frame_index() const { return next_index_; }
    const SpatialMemory& spatial() const { return spatial_; }
    const TemporalMemory& temporal() const { return temporal_; }
    const ModelConfig& config() const { return cfg_; }

private:
    void check_geometry(const Frame& frame) const;

    ModelConfig cfg_;
    ModelWeights weights_;
    SpatialMemory spatial_;
    TemporalMemory temporal_;
    std::size_t targets_ = 0;
    std::size_t next_index_ = 0;
    bool initialized_ = false;
};

}  // namespace stma
