#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mosformer/ops.hpp"
#include "mosformer/tensor.hpp"

namespace mosf {

// Non-overlapping M x M token windows of a feature map, raster order both
// across windows and within a window. Batch is folded into the window axis.
template <typename T>
struct WindowGrid {
    std::size_t window = 0;  // M
    std::size_t batch = 1;
    std::size_t grid_h = 0, grid_w = 0;
    std::size_t dim = 0;
    bool from_rank3 = false;
    Tensor<T> tokens;  // [batch*grid_h*grid_w, M*M, dim]

    std::size_t num_windows() const { return grid_h * grid_w; }
    // Spatial offset (row, col) of a window within its slice.
    std::array<std::size_t, 2> origin(std::size_t w) const {
        return {(w % (grid_h * grid_w)) / grid_w * window, (w % (grid_h * grid_w)) % grid_w * window};
    }
};

// fmap: [d,H,W] or [B,d,H,W]; H and W must be divisible by the window size.
template <typename T>
WindowGrid<T> partition_windows(const Tensor<T>& fmap, std::size_t window);

// Exact inverse of partition_windows for the given spatial extents.
template <typename T>
Tensor<T> reverse_windows(const WindowGrid<T>& grid, std::size_t h, std::size_t w);

// Toroidal roll: out[y,x] = in[(y-dh) mod H, (x-dw) mod W].
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& fmap, std::ptrdiff_t dh, std::ptrdiff_t dw);

// index(p,q) = (dr+M-1)*(2M-1) + (dc+M-1) with (dr,dc) = coord(p)-coord(q);
// row-major M^2 x M^2.
std::vector<std::int32_t> relative_position_index(std::size_t window);

// Additive mask for the shifted layer: entry 0 where a token pair originates
// from the same displaced window, large negative otherwise. Layout
// [nwin, T, T] with T = num_slices * M^2; identical fragmentation is tiled
// across the slice blocks.
template <typename T>
std::vector<T> shift_attention_mask(std::size_t h, std::size_t w, std::size_t window, std::size_t shift,
                                    std::size_t num_slices);

template <typename T>
struct CswMsaParams {
    Tensor<T> qkv_w;       // [d, 3d]
    Tensor<T> qkv_b;       // [3d]
    Tensor<T> proj_w;      // [d, d]
    Tensor<T> proj_b;      // [d]
    Tensor<T> bias_table;  // [heads, (2M-1)^2]
};

// Joint cross-slice window attention. `slices` holds 2s+1 grids with equal
// geometry; each spatial window attends over the concatenation of its tokens
// from every slice. Returns the updated grids in the same order.
template <typename T>
std::vector<WindowGrid<T>> csw_msa(const std::vector<WindowGrid<T>>& slices, const CswMsaParams<T>& params,
                                   std::size_t heads, const std::vector<T>* mask = nullptr);

// Core of csw_msa operating on the already concatenated tokens [G, T, d].
template <typename T>
Tensor<T> csw_msa_joint(const Tensor<T>& joint_tokens, const CswMsaParams<T>& params, std::size_t heads,
                        std::size_t window, std::size_t num_slices, std::size_t batch, std::size_t nwin,
                        const std::vector<T>* mask);

template <typename T>
struct IfTransLayerParams {
    Tensor<T> ln1_g, ln1_b;
    CswMsaParams<T> msa;
    Tensor<T> ln2_g, ln2_b;
    Tensor<T> mlp1_w, mlp1_b;  // [d, ratio*d]
    Tensor<T> mlp2_w, mlp2_b;  // [ratio*d, d]
};

template <typename T>
struct IfTransParams {
    std::array<IfTransLayerParams<T>, 2> layers;  // regular, shifted
};

struct IfTransConfig {
    std::size_t window = 7;
    std::size_t heads = 1;
    double mlp_ratio = 4.0;
    // When false, the second layer re-reads the original neighbor features
    // instead of the jointly updated ones.
    bool joint_neighbor_update = true;
};

// Two successive pre-norm layers (regular then shifted window partitioning)
// applied jointly to all 2s+1 slices with shared weights. Inputs are feature
// maps [B,d,h,w] (or [d,h,w]) in slice order; the middle entry is the target.
// Returns the updated maps; callers forward only the middle one.
template <typename T>
std::vector<Tensor<T>> if_trans_block(const std::vector<Tensor<T>>& slices, const IfTransConfig& cfg,
                                      const IfTransParams<T>& params);

}  // namespace mosf
