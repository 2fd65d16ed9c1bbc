#include "stma/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stma {

SpatialMemory::SpatialMemory(std::size_t capacity, std::size_t insertion_stride)
    : capacity_(capacity), stride_(insertion_stride) {
    if (capacity_ == 0) throw ContractError("spatial memory capacity must be >= 1");
    if (stride_ == 0) throw ContractError("insertion stride must be >= 1");
}

void SpatialMemory::insert(std::size_t frame_index, FeatureMap features, Frame frame) {
    if (last_index_ && frame_index <= *last_index_)
        throw ContractError("spatial insert indices must be strictly increasing: " +
                            std::to_string(frame_index) + " after " + std::to_string(*last_index_));
    last_index_ = frame_index;
    if (!pinned_) {
        pinned_ = Entry{frame_index, std::move(features), std::move(frame)};
        return;
    }
    if (frame_index % stride_ != 0) return;
    queue_.push_back(Entry{frame_index, std::move(features), std::move(frame)});
    while (queue_.size() + 1 > capacity_) queue_.pop_front();
}

std::vector<FeatureMap> SpatialMemory::references() const {
    if (!pinned_) throw ContractError("spatial memory is empty; insert frame 0 first");
    std::vector<FeatureMap> out;
    out.reserve(size());
    out.push_back(pinned_->features);
    for (const auto& e : queue_) out.push_back(e.features);
    return out;
}

std::vector<std::size_t> SpatialMemory::stored_indices() const {
    std::vector<std::size_t> out;
    if (pinned_) out.push_back(pinned_->frame_index);
    for (const auto& e : queue_) out.push_back(e.frame_index);
    return out;
}

TemporalMemory::TemporalMemory(std::size_t capacity, bool pin_first)
    : capacity_(capacity), pin_first_(pin_first) {
    if (capacity_ == 0) throw ContractError("temporal memory capacity must be >= 1");
}

std::size_t TemporalMemory::target_count() const {
    if (entries_.empty()) throw ContractError("temporal memory is empty");
    return entries_.front().values.shape()[0];
}

std::size_t TemporalMemory::token_count() const {
    if (entries_.empty()) throw ContractError("temporal memory is empty");
    return entries_.front().key.rows();
}

std::size_t TemporalMemory::value_channels() const {
    if (entries_.empty()) throw ContractError("temporal memory is empty");
    return entries_.front().values.shape()[2];
}

std::optional<std::size_t> TemporalMemory::insert(std::size_t frame_index, Tensor key,
                                                  Tensor values) {
    if (key.rank() != 2) throw DimensionError("temporal key must be {N,C}, got " + shape_str(key.shape()));
    if (values.rank() != 3)
        throw DimensionError("temporal values must be {n,N,Cv}, got " + shape_str(values.shape()));
    if (!entries_.empty()) {
        const Entry& ref = entries_.front();
        if (!key.same_shape(ref.key) || !values.same_shape(ref.values))
            throw DimensionError("temporal entry shape mismatch: key " + shape_str(key.shape()) +
                                 " values " + shape_str(values.shape()) + " vs stored key " +
                                 shape_str(ref.key.shape()) + " values " +
                                 shape_str(ref.values.shape()));
    }
    double baseline = 0.0;
    if (!entries_.empty()) {
        for (const auto& e : entries_) baseline += e.usage;
        baseline /= static_cast<double>(entries_.size());
    }
    if (!pinned_frame_) pinned_frame_ = frame_index;
    entries_.push_back(Entry{frame_index, std::move(key), std::move(values), baseline});

    if (entries_.size() <= capacity_) return std::nullopt;
    std::size_t victim = entries_.size();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (pin_first_ && pinned_frame_ && entries_[i].frame_index == *pinned_frame_) continue;
        if (victim == entries_.size() || entries_[i].usage < entries_[victim].usage ||
            (entries_[i].usage == entries_[victim].usage &&
             entries_[i].frame_index < entries_[victim].frame_index))
            victim = i;
    }
    if (victim == entries_.size())
        throw ContractError("temporal memory cannot evict: all entries pinned");
    const std::size_t evicted = entries_[victim].frame_index;
    entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(victim));
    return evicted;
}

void TemporalMemory::touch(const UsageUpdate& update) {
    if (update.increments.size() != entries_.size())
        throw ContractError("usage update has " + std::to_string(update.increments.size()) +
                            " increments for " + std::to_string(entries_.size()) + " entries");
    for (double inc : update.increments)
        if (inc < 0.0) throw ContractError("usage increments must be nonnegative");
    for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].usage += update.increments[i];
}

IdEncoderWeights make_id_encoder(std::size_t value_channels, Rng& rng) {
    auto conv = [&](std::size_t cout, std::size_t cin) {
        Conv2d c;
        c.weight = random_normal({cout, cin, 3, 3}, rng,
                                 1.0 / std::sqrt(static_cast<double>(cin * 9)));
        c.bias = Tensor::zeros({cout});
        c.stride = 2;
        c.pad = 1;
        return c;
    };
    return IdEncoderWeights{conv(16, 4), conv(32, 16), conv(32, 32), conv(value_channels, 32)};
}

Tensor encode_id_values(const Frame& frame, const TargetMasks& masks, std::size_t n,
                        const IdEncoderWeights& w) {
    if (n == 0) throw ContractError("encode_id_values needs n >= 1");
    if (masks.height != frame.height || masks.width != frame.width)
        throw DimensionError("mask geometry " + std::to_string(masks.height) + "x" +
                             std::to_string(masks.width) + " does not match frame " +
                             std::to_string(frame.height) + "x" + std::to_string(frame.width));
    if (masks.max_id() > static_cast<int>(n))
        throw ContractError("mask contains target ID " + std::to_string(masks.max_id()) +
                            " beyond n=" + std::to_string(n));

    const std::size_t h = frame.height, width = frame.width;
    Tensor out;
    for (std::size_t j = 1; j <= n; ++j) {
        Tensor input({4, h, width});
        std::copy(frame.pixels.data().begin(), frame.pixels.data().end(), input.data().begin());
        for (std::size_t i = 0; i < h * width; ++i)
            input[3 * h * width + i] = masks.ids[i] == static_cast<int>(j) ? 1.0 : 0.0;
        Tensor x = w.conv1.apply(input);
        x = w.conv2.apply(relu(x));
        x = w.conv3.apply(relu(x));
        x = w.conv4.apply(relu(x));
        Tensor tokens = grid_to_tokens(x);  // {N, Cv}
        if (out.empty()) out = Tensor({n, tokens.rows(), tokens.cols()});
        std::copy(tokens.data().begin(), tokens.data().end(),
                  out.data().begin() + (j - 1) * tokens.size());
    }
    return out;
}

ObjectFeatures object_features_from_memory(const TemporalMemory& mem, const Tensor& projection) {
    if (mem.size() == 0)
        throw ContractError("temporal memory is empty; encode frame 0 before reading objects");
    const std::size_t n = mem.target_count();
    const std::size_t tokens = mem.token_count();
    const std::size_t cv = mem.value_channels();
    if (projection.rows() != cv)
        throw DimensionError("object projection expects " + std::to_string(cv) + " rows, got " +
                             shape_str(projection.shape()));
    Tensor pooled({n, cv});
    std::fill(pooled.data().begin(), pooled.data().end(),
              -std::numeric_limits<double>::infinity());
    for (const auto& e : mem.entries())
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < tokens; ++p)
                for (std::size_t c = 0; c < cv; ++c)
                    pooled[j * cv + c] =
                        std::max(pooled[j * cv + c], e.values[(j * tokens + p) * cv + c]);
    return ObjectFeatures{matmul(pooled, projection)};
}

}  // namespace stma
