#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mosformer/attention.hpp"
#include "mosformer/encoder.hpp"
#include "mosformer/losses.hpp"
#include "mosformer/params.hpp"
#include "mosformer/volume_io.hpp"

namespace mosf {

enum class EncoderMode { kSingle, kDualIndependent, kDualMomentum };
enum class BoundaryMode { kClamp, kMirror };

struct ModelConfig {
    std::size_t in_channels = 1;   // C
    std::size_t num_classes = 9;   // C0
    std::size_t neighborhood = 1;  // s
    EncoderMode encoder_mode = EncoderMode::kDualMomentum;
    EncoderConfig encoder;
    std::array<bool, 4> fuse_scale{true, true, true, true};  // 1/2, 1/4, 1/8, 1/16
    bool fusion_bypass = false;                              // skip the fusion blocks entirely
    std::size_t window = 7;                                  // M
    // Heads per fusion site: the four scales plus the stage-4 bottom map.
    std::array<std::size_t, 5> heads{2, 4, 8, 16, 16};
    double mlp_ratio = 4.0;
    bool joint_neighbor_update = true;
    // Decoder block output channels at 1/16, 1/8, 1/4, 1/2.
    std::array<std::size_t, 4> decoder_channels{512, 256, 128, 64};
    double momentum_m = 0.1;
    bool blend_buffers = true;
    BoundaryMode boundary = BoundaryMode::kClamp;

    void validate() const;
};

// Full-resolution logits plus the two auxiliary deep-supervision resolutions.
template <typename T>
struct LogitStack {
    Tensor<T> full;     // [B,C0,H,W]
    Tensor<T> half;     // [B,C0,H/2,W/2]
    Tensor<T> quarter;  // [B,C0,H/4,W/4]
};

template <typename T>
class MosformerModel {
public:
    MosformerModel(const ModelConfig& cfg, std::uint64_t init_seed);

    // target: [B,C,H,W] or [C,H,W]; neighbors: 2s maps of the same shape in
    // slice order (j = i-s..i+s without i).
    LogitStack<T> forward(const Tensor<T>& target, const std::vector<Tensor<T>>& neighbors, bool training);

    // Slice-wise inference over a volume with boundary clamping (or
    // mirroring); argmax of the full-resolution logits.
    LabelVolume predict_volume(const Volume& volume) const;

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    // Parameters the optimizer updates in the current encoder mode.
    std::vector<Tensor<T>> trainable_params() const;

    bool has_momentum_encoder() const { return cfg_.encoder_mode != EncoderMode::kSingle; }
    DualEncoderState<T>& dual_state() { return dual_state_; }

    // Neighbor slice index for a target slice under the boundary policy.
    std::size_t neighbor_index(std::size_t slice, std::ptrdiff_t offset, std::size_t depth) const;

private:
    struct DecoderBlock {
        Tensor<T> w1, g1, b1, rm1, rv1;
        Tensor<T> w2, g2, b2, rm2, rv2;
    };
    struct Head {
        Tensor<T> w, b;
    };

    Tensor<T> decode_block(const DecoderBlock& blk, const Tensor<T>& x, bool training) const;
    Tensor<T> fuse_site(std::size_t site, const Tensor<T>& target_map, const std::vector<Tensor<T>>& neighbor_maps,
                        std::size_t s) const;

    ModelConfig cfg_;
    ParamStore<T> store_;
    ResidualEncoder<T> target_enc_;
    std::unique_ptr<ResidualEncoder<T>> neighbor_enc_;
    std::array<std::unique_ptr<IfTransParams<T>>, 5> ift_;  // per fusion site
    std::array<DecoderBlock, 4> decoder_;                   // d4 (1/16) .. d1 (1/2)
    Head head_full_, head_half_, head_quarter_;
    DualEncoderState<T> dual_state_;
};

// Shared name prefixes for checkpoints.
inline constexpr const char* kTargetEncoderPrefix = "enc.target.";
inline constexpr const char* kMomentumEncoderPrefix = "enc.momentum.";

}  // namespace mosf
