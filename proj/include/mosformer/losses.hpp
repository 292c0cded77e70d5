#pragma once

#include <cstdint>
#include <vector>

#include "mosformer/tensor.hpp"

namespace mosf {

// Deep-supervision weights: total = l1*L_{H,W} + l2*L_{H/2,W/2} + l3*L_{H/4,W/4}
// with L = a1*CE + a2*Dice at each resolution.
struct LossWeights {
    double lambda1 = 0.5, lambda2 = 0.25, lambda3 = 0.125;
    double alpha1 = 0.8, alpha2 = 1.2;
};

// Integer class labels per pixel; batch folded in front.
struct LabelGrid {
    std::size_t b = 1, h = 0, w = 0;
    std::vector<std::int32_t> v;

    std::size_t pixels() const { return b * h * w; }
};

// Nearest-neighbor downsampling by an integer factor (top-left convention).
LabelGrid downsample_labels(const LabelGrid& labels, std::size_t factor);

// logits: [C,h,w] or [B,C,h,w]; labels must lie in [0, C).
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, const LabelGrid& labels);

// 1 - mean over classes (background included) of the smoothed overlap
// (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps); per-sample, averaged over the batch.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const LabelGrid& labels, T eps = T(1e-5));

template <typename T>
struct LogitStack;  // defined in model.hpp

template <typename T>
struct DeepSupervisionTerms {
    Tensor<T> total;
    Tensor<T> ce_full, dice_full;
    Tensor<T> ce_half, dice_half;
    Tensor<T> ce_quarter, dice_quarter;
};

template <typename T>
DeepSupervisionTerms<T> deep_supervision_terms(const Tensor<T>& logits_full, const Tensor<T>& logits_half,
                                               const Tensor<T>& logits_quarter, const LabelGrid& labels,
                                               const LossWeights& w);

template <typename T>
Tensor<T> deep_supervision_loss(const Tensor<T>& logits_full, const Tensor<T>& logits_half,
                                const Tensor<T>& logits_quarter, const LabelGrid& labels, const LossWeights& w);

}  // namespace mosf
