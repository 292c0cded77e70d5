#include "mosformer/losses.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "mosformer/ops.hpp"

namespace mosf {

namespace {

struct LogitDims {
    std::size_t b, c, h, w;
};

template <typename T>
LogitDims logit_dims(const Tensor<T>& logits, const LabelGrid& labels, const char* what) {
    LogitDims d{};
    if (logits.rank() == 3) {
        d = {1, logits.dim(0), logits.dim(1), logits.dim(2)};
    } else if (logits.rank() == 4) {
        d = {logits.dim(0), logits.dim(1), logits.dim(2), logits.dim(3)};
    } else {
        throw DimensionError(std::string(what) + ": logits must be [C,h,w] or [B,C,h,w]");
    }
    if (labels.b != d.b || labels.h != d.h || labels.w != d.w)
        throw DimensionError(std::string(what) + ": label grid does not match logits");
    if (labels.v.size() != labels.pixels()) throw DimensionError(std::string(what) + ": label buffer length mismatch");
    for (std::int32_t l : labels.v)
        if (l < 0 || static_cast<std::size_t>(l) >= d.c)
            throw DataError(std::string(what) + ": label outside [0, num_classes)");
    return d;
}

// Channel softmax of [B,C,h,w] computed per pixel; returns probabilities.
template <typename T>
std::vector<T> channel_softmax(const std::vector<T>& logits, const LogitDims& d) {
    std::vector<T> p(logits.size());
    const std::size_t hw = d.h * d.w, chw = d.c * hw;
    for (std::size_t bi = 0; bi < d.b; ++bi)
        for (std::size_t i = 0; i < hw; ++i) {
            const T* in = logits.data() + bi * chw + i;
            T* out = p.data() + bi * chw + i;
            T mx = in[0];
            for (std::size_t c = 1; c < d.c; ++c) mx = std::max(mx, in[c * hw]);
            T denom = 0;
            for (std::size_t c = 0; c < d.c; ++c) {
                const T e = std::exp(in[c * hw] - mx);
                out[c * hw] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (std::size_t c = 0; c < d.c; ++c) out[c * hw] *= inv;
        }
    return p;
}

}  // namespace

LabelGrid downsample_labels(const LabelGrid& labels, std::size_t factor) {
    if (factor == 0 || labels.h % factor != 0 || labels.w % factor != 0)
        throw DimensionError("downsample_labels: extents not divisible by factor");
    LabelGrid out;
    out.b = labels.b;
    out.h = labels.h / factor;
    out.w = labels.w / factor;
    out.v.resize(out.pixels());
    for (std::size_t bi = 0; bi < labels.b; ++bi)
        for (std::size_t y = 0; y < out.h; ++y)
            for (std::size_t x = 0; x < out.w; ++x)
                out.v[(bi * out.h + y) * out.w + x] = labels.v[(bi * labels.h + y * factor) * labels.w + x * factor];
    return out;
}

template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, const LabelGrid& labels) {
    const LogitDims d = logit_dims(logits, labels, "ce_loss");
    const std::size_t hw = d.h * d.w, chw = d.c * hw;
    auto probs = std::make_shared<std::vector<T>>(channel_softmax(logits.data(), d));
    T loss = 0;
    for (std::size_t bi = 0; bi < d.b; ++bi)
        for (std::size_t i = 0; i < hw; ++i) {
            const auto l = static_cast<std::size_t>(labels.v[bi * hw + i]);
            loss -= std::log(std::max((*probs)[bi * chw + l * hw + i], std::numeric_limits<T>::min()));
        }
    const T inv_n = T(1) / static_cast<T>(d.b * hw);
    loss *= inv_n;
    auto ln = logits.node();
    auto lv = std::make_shared<std::vector<std::int32_t>>(labels.v);
    return make_op<T>({1}, {loss}, {logits}, [ln, probs, lv, d, hw, chw, inv_n](detail::Node<T>& o) {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        const T g = o.grad[0] * inv_n;
        for (std::size_t bi = 0; bi < d.b; ++bi)
            for (std::size_t i = 0; i < hw; ++i) {
                const auto l = static_cast<std::size_t>((*lv)[bi * hw + i]);
                for (std::size_t c = 0; c < d.c; ++c) {
                    const T p = (*probs)[bi * chw + c * hw + i];
                    ln->grad[bi * chw + c * hw + i] += g * (p - (c == l ? T(1) : T(0)));
                }
            }
    });
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const LabelGrid& labels, T eps) {
    const LogitDims d = logit_dims(logits, labels, "dice_loss");
    const std::size_t hw = d.h * d.w, chw = d.c * hw;
    auto probs = std::make_shared<std::vector<T>>(channel_softmax(logits.data(), d));

    // Per sample and class: overlap = sum p*g, mass = sum p + sum g.
    auto overlap = std::make_shared<std::vector<T>>(d.b * d.c, T(0));
    auto mass = std::make_shared<std::vector<T>>(d.b * d.c, T(0));
    for (std::size_t bi = 0; bi < d.b; ++bi)
        for (std::size_t c = 0; c < d.c; ++c) {
            T ov = 0, ms = 0;
            const T* p = probs->data() + bi * chw + c * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const bool g = static_cast<std::size_t>(labels.v[bi * hw + i]) == c;
                ov += g ? p[i] : T(0);
                ms += p[i] + (g ? T(1) : T(0));
            }
            (*overlap)[bi * d.c + c] = ov;
            (*mass)[bi * d.c + c] = ms;
        }
    T loss = 0;
    for (std::size_t bi = 0; bi < d.b; ++bi) {
        T dice_sum = 0;
        for (std::size_t c = 0; c < d.c; ++c)
            dice_sum += (T(2) * (*overlap)[bi * d.c + c] + eps) / ((*mass)[bi * d.c + c] + eps);
        loss += T(1) - dice_sum / static_cast<T>(d.c);
    }
    loss /= static_cast<T>(d.b);

    auto ln = logits.node();
    auto lv = std::make_shared<std::vector<std::int32_t>>(labels.v);
    return make_op<T>({1}, {loss}, {logits}, [ln, probs, lv, overlap, mass, d, hw, chw, eps](detail::Node<T>& o) {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        const T gout = o.grad[0];
        const T norm = gout / (static_cast<T>(d.b) * static_cast<T>(d.c));
        std::vector<T> dp(d.c);
        for (std::size_t bi = 0; bi < d.b; ++bi)
            for (std::size_t i = 0; i < hw; ++i) {
                const auto l = static_cast<std::size_t>((*lv)[bi * hw + i]);
                // d loss / d p_c for this pixel
                for (std::size_t c = 0; c < d.c; ++c) {
                    const T ov = (*overlap)[bi * d.c + c];
                    const T ms = (*mass)[bi * d.c + c] + eps;
                    const T g = c == l ? T(1) : T(0);
                    dp[c] = -norm * (T(2) * g * ms - (T(2) * ov + eps)) / (ms * ms);
                }
                // chain through the per-pixel softmax
                const T* p = probs->data() + bi * chw + i;
                T dot = 0;
                for (std::size_t c = 0; c < d.c; ++c) dot += dp[c] * p[c * hw];
                for (std::size_t c = 0; c < d.c; ++c)
                    ln->grad[bi * chw + c * hw + i] += p[c * hw] * (dp[c] - dot);
            }
    });
}

template <typename T>
DeepSupervisionTerms<T> deep_supervision_terms(const Tensor<T>& logits_full, const Tensor<T>& logits_half,
                                               const Tensor<T>& logits_quarter, const LabelGrid& labels,
                                               const LossWeights& w) {
    const LabelGrid half = downsample_labels(labels, 2);
    const LabelGrid quarter = downsample_labels(labels, 4);
    DeepSupervisionTerms<T> t;
    t.ce_full = ce_loss(logits_full, labels);
    t.dice_full = dice_loss(logits_full, labels);
    t.ce_half = ce_loss(logits_half, half);
    t.dice_half = dice_loss(logits_half, half);
    t.ce_quarter = ce_loss(logits_quarter, quarter);
    t.dice_quarter = dice_loss(logits_quarter, quarter);
    auto level = [&](const Tensor<T>& ce, const Tensor<T>& dc) {
        return add(scale(ce, static_cast<T>(w.alpha1)), scale(dc, static_cast<T>(w.alpha2)));
    };
    Tensor<T> total = scale(level(t.ce_full, t.dice_full), static_cast<T>(w.lambda1));
    total = add(total, scale(level(t.ce_half, t.dice_half), static_cast<T>(w.lambda2)));
    total = add(total, scale(level(t.ce_quarter, t.dice_quarter), static_cast<T>(w.lambda3)));
    t.total = total;
    return t;
}

template <typename T>
Tensor<T> deep_supervision_loss(const Tensor<T>& logits_full, const Tensor<T>& logits_half,
                                const Tensor<T>& logits_quarter, const LabelGrid& labels, const LossWeights& w) {
    return deep_supervision_terms(logits_full, logits_half, logits_quarter, labels, w).total;
}

#define MOSF_INSTANTIATE_LOSS(T)                                                                                    \
    template Tensor<T> ce_loss<T>(const Tensor<T>&, const LabelGrid&);                                              \
    template Tensor<T> dice_loss<T>(const Tensor<T>&, const LabelGrid&, T);                                         \
    template DeepSupervisionTerms<T> deep_supervision_terms<T>(const Tensor<T>&, const Tensor<T>&,                  \
                                                               const Tensor<T>&, const LabelGrid&,                  \
                                                               const LossWeights&);                                 \
    template Tensor<T> deep_supervision_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                                const LabelGrid&, const LossWeights&);

MOSF_INSTANTIATE_LOSS(float)
MOSF_INSTANTIATE_LOSS(double)

}  // namespace mosf
