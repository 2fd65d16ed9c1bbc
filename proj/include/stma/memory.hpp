#pragma once

#include "stma/conv.hpp"
#include "stma/embed.hpp"
#include "stma/image.hpp"
#include "stma/rng.hpp"
#include "stma/stml.hpp"
#include "stma/tensor.hpp"

#include <deque>
#include <optional>
#include <vector>

namespace stma {

// FIFO bank of reference frames. The first frame that provided the targets
// is pinned and never evicted; later frames enter the queue on the
// insertion stride and the oldest queue entry is dropped at capacity.
class SpatialMemory {
public:
    struct Entry {
        std::size_t frame_index = 0;
        FeatureMap features;
        Frame frame;
    };

    SpatialMemory(std::size_t capacity, std::size_t insertion_stride);

    // Pins on the very first call; afterwards only frame indices divisible
    // by the stride enter the queue. Indices must be strictly increasing.
    void insert(std::size_t frame_index, FeatureMap features, Frame frame);

    // Pinned entry first, then the queue oldest-to-newest.
    std::vector<FeatureMap> references() const;
    std::vector<std::size_t> stored_indices() const;

    std::size_t size() const { return (pinned_ ? 1 : 0) + queue_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t insertion_stride() const { return stride_; }
    const std::optional<Entry>& pinned() const { return pinned_; }

private:
    std::size_t capacity_;
    std::size_t stride_;
    std::optional<Entry> pinned_;
    std::deque<Entry> queue_;
    std::optional<std::size_t> last_index_;
};

// Affinity mass received by each temporal entry during one readout; the
// increments of a readout over N query tokens sum to N.
struct UsageUpdate {
    std::vector<double> increments;  // one per entry, in entry order
};

// Key/value bank for ID association with least-frequently-used eviction.
class TemporalMemory {
public:
    struct Entry {
        std::size_t frame_index = 0;
        Tensor key;     // {N, C}
        Tensor values;  // {n, N, Cv}
        double usage = 0.0;
    };

    explicit TemporalMemory(std::size_t capacity, bool pin_first = true);

    // Appends with usage seeded to the mean usage of current entries
    // (0 when empty). At capacity the least-used entry is evicted, ties
    // broken toward the smallest frame index. With pin_first the entry of
    // the first inserted frame is exempt from eviction.
    // Returns the evicted frame index, if any.
    std::optional<std::size_t> insert(std::size_t frame_index, Tensor key, Tensor values);

    void touch(const UsageUpdate& update);

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool pin_first() const { return pin_first_; }
    std::optional<std::size_t> pinned_frame() const { return pinned_frame_; }
    std::size_t target_count() const;
    std::size_t token_count() const;
    std::size_t value_channels() const;

private:
    std::size_t capacity_;
    bool pin_first_;
    std::vector<Entry> entries_;
    std::optional<std::size_t> pinned_frame_;
};

// Per-target mask+frame encoder producing the 1/16-resolution ID values.
struct IdEncoderWeights {
    Conv2d conv1;  // 4 -> 16, stride 2
    Conv2d conv2;  // 16 -> 32, stride 2
    Conv2d conv3;  // 32 -> 32, stride 2
    Conv2d conv4;  // 32 -> Cv, stride 2
};

IdEncoderWeights make_id_encoder(std::size_t value_channels, Rng& rng);

// For each target j in 1..n: frame channels concatenated with the binary
// mask of j, encoded to a {N, Cv} grid. Output shape {n, N, Cv}.
Tensor encode_id_values(const Frame& frame, const TargetMasks& masks, std::size_t n,
                        const IdEncoderWeights& w);

// Per-target max-pool over all entries and positions, then a linear
// projection {Cv, C} to the block channel width.
ObjectFeatures object_features_from_memory(const TemporalMemory& mem,
                                           const Tensor& projection);

}  // namespace stma
