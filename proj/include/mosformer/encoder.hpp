#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "mosformer/ops.hpp"
#include "mosformer/params.hpp"
#include "mosformer/tensor.hpp"

namespace mosf {

// Four-stage residual CNN. The stem and the first three stages halve the
// resolution; the last stage keeps it, so the deepest two maps share the 1/16
// scale.
struct EncoderConfig {
    std::size_t in_channels = 1;
    std::size_t stem_channels = 16;
    std::array<std::size_t, 4> stage_channels{16, 32, 64, 128};
    std::array<std::size_t, 4> blocks_per_stage{1, 1, 1, 1};
    std::size_t stem_kernel = 3;  // 3 or 7
    bool bottleneck = false;      // basic blocks by default; bottleneck for the large preset
    double bn_momentum = 0.9;
};

inline constexpr std::array<std::size_t, 4> kStageStrides{2, 2, 2, 1};

// levels: 1/2 (stem), 1/4, 1/8, 1/16 (stage 3); bottom: stage 4, also 1/16.
template <typename T>
struct FeaturePyramid {
    std::array<Tensor<T>, 4> levels;
    Tensor<T> bottom;
};

// Forward-pass behavior flags. Running statistics only move when
// update_running is set (the target-encoder training pass).
struct EncodeMode {
    bool training = false;
    bool update_running = false;
};

template <typename T>
class ResidualEncoder {
public:
    ResidualEncoder() = default;
    // Registers parameters under `prefix` (e.g. "enc.target.") and initializes
    // them from `rng`.
    ResidualEncoder(const EncoderConfig& cfg, ParamStore<T>& store, const std::string& prefix, Rng& rng);

    // x: [B,C,H,W] or [C,H,W]; H and W must be divisible by 16.
    FeaturePyramid<T> forward(const Tensor<T>& x, const EncodeMode& mode) const;

    const EncoderConfig& config() const { return cfg_; }
    std::array<std::size_t, 5> feature_dims() const {
        return {cfg_.stem_channels, cfg_.stage_channels[0], cfg_.stage_channels[1], cfg_.stage_channels[2],
                cfg_.stage_channels[3]};
    }

private:
    struct ConvBn {
        Tensor<T> w, gamma, beta, rmean, rvar;
        std::size_t stride = 1, pad = 0;
    };
    struct Block {
        std::vector<ConvBn> convs;  // 2 for basic, 3 for bottleneck
        bool has_down = false;
        ConvBn down;
    };

    Tensor<T> conv_bn(const ConvBn& cb, const Tensor<T>& x, const EncodeMode& mode) const;
    ConvBn make_conv_bn(ParamStore<T>& store, const std::string& name, std::size_t in_ch, std::size_t out_ch,
                        std::size_t kernel, std::size_t stride, Rng& rng);

    EncoderConfig cfg_;
    ConvBn stem_;
    std::array<std::vector<Block>, 4> stages_;
};

// Parameter pairing for the momentum update of the neighborhood encoder:
// theta2 <- m*theta2 + (1-m)*theta1, applied once per training iteration.
template <typename T>
struct DualEncoderState {
    T m = T(0.1);
    bool blend_buffers = true;  // false: buffers are copied instead of blended
    std::vector<std::pair<Tensor<T>, Tensor<T>>> params;   // (theta1, theta2)
    std::vector<std::pair<Tensor<T>, Tensor<T>>> buffers;  // BN running stats
};

template <typename T>
void momentum_update(DualEncoderState<T>& state);

// Builds the pairing from two identically structured prefixes of a store and
// copies theta1 into theta2 when `copy_now` is set (initialization contract).
template <typename T>
DualEncoderState<T> make_dual_state(ParamStore<T>& store, const std::string& target_prefix,
                                    const std::string& momentum_prefix, T m, bool blend_buffers, bool copy_now);

// Target slice through the target encoder (gradients tracked), neighbors
// stacked into one batch through the neighborhood encoder. A null
// neighbor_enc routes neighbors through the target encoder (single-encoder
// mode). Neighbor passes never touch running statistics.
template <typename T>
std::pair<FeaturePyramid<T>, std::vector<FeaturePyramid<T>>> dual_encode(const ResidualEncoder<T>& target_enc,
                                                                         const ResidualEncoder<T>* neighbor_enc,
                                                                         const Tensor<T>& target,
                                                                         const std::vector<Tensor<T>>& neighbors,
                                                                         bool training);

}  // namespace mosf
