#include "mosformer/attention.hpp"

#include <cmath>

namespace mosf {

namespace {

constexpr double kMaskNegative = -1e9;  // finite stand-in for -inf

template <typename T>
struct MapDims {
    std::size_t b, d, h, w;
    bool rank3;
};

template <typename T>
MapDims<T> map_dims(const Tensor<T>& fmap, const char* what) {
    if (fmap.rank() == 3) return {1, fmap.dim(0), fmap.dim(1), fmap.dim(2), true};
    if (fmap.rank() == 4) return {fmap.dim(0), fmap.dim(1), fmap.dim(2), fmap.dim(3), false};
    throw DimensionError(std::string(what) + ": expects [d,H,W] or [B,d,H,W]");
}

}  // namespace

template <typename T>
WindowGrid<T> partition_windows(const Tensor<T>& fmap, std::size_t window) {
    const auto dm = map_dims(fmap, "partition_windows");
    if (window < 1) throw DimensionError("partition_windows: window must be >= 1");
    if (dm.h % window != 0 || dm.w % window != 0)
        throw DimensionError("partition_windows: extents not divisible by window size");
    const std::size_t gh = dm.h / window, gw = dm.w / window, m2 = window * window;
    const std::size_t nwin = gh * gw;
    std::vector<std::int64_t> idx(dm.b * nwin * m2 * dm.d);
    std::size_t i = 0;
    for (std::size_t b = 0; b < dm.b; ++b)
        for (std::size_t wr = 0; wr < gh; ++wr)
            for (std::size_t wc = 0; wc < gw; ++wc)
                for (std::size_t tr = 0; tr < window; ++tr)
                    for (std::size_t tc = 0; tc < window; ++tc)
                        for (std::size_t c = 0; c < dm.d; ++c)
                            idx[i++] = static_cast<std::int64_t>(
                                ((b * dm.d + c) * dm.h + wr * window + tr) * dm.w + wc * window + tc);
    WindowGrid<T> grid;
    grid.window = window;
    grid.batch = dm.b;
    grid.grid_h = gh;
    grid.grid_w = gw;
    grid.dim = dm.d;
    grid.from_rank3 = dm.rank3;
    grid.tokens = gather(fmap, std::move(idx), {dm.b * nwin, m2, dm.d});
    return grid;
}

template <typename T>
Tensor<T> reverse_windows(const WindowGrid<T>& grid, std::size_t h, std::size_t w) {
    const std::size_t m = grid.window, gh = grid.grid_h, gw = grid.grid_w, d = grid.dim, b = grid.batch;
    if (gh * m != h || gw * m != w) throw DimensionError("reverse_windows: extents inconsistent with grid");
    if (!grid.tokens.defined() || grid.tokens.size() != b * gh * gw * m * m * d)
        throw DimensionError("reverse_windows: token tensor inconsistent with grid metadata");
    const std::size_t nwin = gh * gw, m2 = m * m;
    std::vector<std::int64_t> idx(b * d * h * w);
    std::size_t i = 0;
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const std::size_t wr = y / m, tr = y % m, wc = x / m, tc = x % m;
                    idx[i++] = static_cast<std::int64_t>(((bi * nwin + wr * gw + wc) * m2 + tr * m + tc) * d + c);
                }
    Shape out_shape = grid.from_rank3 ? Shape{d, h, w} : Shape{b, d, h, w};
    return gather(grid.tokens, std::move(idx), std::move(out_shape));
}

template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& fmap, std::ptrdiff_t dh, std::ptrdiff_t dw) {
    const auto dm = map_dims(fmap, "cyclic_shift");
    const auto hh = static_cast<std::ptrdiff_t>(dm.h), ww = static_cast<std::ptrdiff_t>(dm.w);
    const std::ptrdiff_t rh = ((dh % hh) + hh) % hh, rw = ((dw % ww) + ww) % ww;
    std::vector<std::int64_t> idx(fmap.size());
    std::size_t i = 0;
    for (std::size_t p = 0; p < dm.b * dm.d; ++p)
        for (std::ptrdiff_t y = 0; y < hh; ++y) {
            const std::ptrdiff_t sy = (y - rh + hh) % hh;
            for (std::ptrdiff_t x = 0; x < ww; ++x) {
                const std::ptrdiff_t sx = (x - rw + ww) % ww;
                idx[i++] = static_cast<std::int64_t>((p * dm.h + static_cast<std::size_t>(sy)) * dm.w +
                                                     static_cast<std::size_t>(sx));
            }
        }
    return gather(fmap, std::move(idx), fmap.shape());
}

std::vector<std::int32_t> relative_position_index(std::size_t window) {
    if (window < 1) throw DimensionError("relative_position_index: window must be >= 1");
    const std::size_t m2 = window * window;
    const std::ptrdiff_t span = 2 * static_cast<std::ptrdiff_t>(window) - 1;
    std::vector<std::int32_t> idx(m2 * m2);
    for (std::size_t p = 0; p < m2; ++p) {
        const std::ptrdiff_t pr = static_cast<std::ptrdiff_t>(p / window), pc = static_cast<std::ptrdiff_t>(p % window);
        for (std::size_t q = 0; q < m2; ++q) {
            const std::ptrdiff_t qr = static_cast<std::ptrdiff_t>(q / window),
                                 qc = static_cast<std::ptrdiff_t>(q % window);
            const std::ptrdiff_t dr = pr - qr + static_cast<std::ptrdiff_t>(window) - 1;
            const std::ptrdiff_t dc = pc - qc + static_cast<std::ptrdiff_t>(window) - 1;
            idx[p * m2 + q] = static_cast<std::int32_t>(dr * span + dc);
        }
    }
    return idx;
}

namespace {

// Region id of an original coordinate under a partition displaced by `shift`:
// band boundaries sit at shift + k*M, plus the leading [0, shift) fragment.
inline std::ptrdiff_t displaced_band(std::size_t coord, std::size_t window, std::size_t shift) {
    if (coord < shift) return -1;
    return static_cast<std::ptrdiff_t>((coord - shift) / window);
}

}  // namespace

template <typename T>
std::vector<T> shift_attention_mask(std::size_t h, std::size_t w, std::size_t window, std::size_t shift,
                                    std::size_t num_slices) {
    if (h % window != 0 || w % window != 0)
        throw DimensionError("shift_attention_mask: extents not divisible by window size");
    const std::size_t gh = h / window, gw = w / window, m2 = window * window;
    const std::size_t nwin = gh * gw;
    const std::size_t t = num_slices * m2;
    std::vector<T> mask(nwin * t * t, T(0));
    if (shift == 0) return mask;

    // Region ids on the rolled canvas: rolled (y,x) holds original
    // ((y+shift) mod h, (x+shift) mod w).
    std::vector<std::ptrdiff_t> rid(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t oy = (y + shift) % h, ox = (x + shift) % w;
            rid[y * w + x] = displaced_band(oy, window, shift) * static_cast<std::ptrdiff_t>(w + window) +
                             displaced_band(ox, window, shift);
        }
    for (std::size_t wr = 0; wr < gh; ++wr)
        for (std::size_t wc = 0; wc < gw; ++wc) {
            const std::size_t wi = wr * gw + wc;
            T* mw = mask.data() + wi * t * t;
            std::vector<std::ptrdiff_t> ids(m2);
            for (std::size_t tr = 0; tr < window; ++tr)
                for (std::size_t tc = 0; tc < window; ++tc)
                    ids[tr * window + tc] = rid[(wr * window + tr) * w + wc * window + tc];
            for (std::size_t p = 0; p < m2; ++p)
                for (std::size_t q = 0; q < m2; ++q) {
                    if (ids[p] == ids[q]) continue;
                    const T v = static_cast<T>(kMaskNegative);
                    for (std::size_t sp = 0; sp < num_slices; ++sp)
                        for (std::size_t sq = 0; sq < num_slices; ++sq)
                            mw[(sp * m2 + p) * t + sq * m2 + q] = v;
                }
        }
    return mask;
}

template <typename T>
Tensor<T> csw_msa_joint(const Tensor<T>& joint_tokens, const CswMsaParams<T>& params, std::size_t heads,
                        std::size_t window, std::size_t num_slices, std::size_t batch, std::size_t nwin,
                        const std::vector<T>* mask) {
    const std::size_t g = joint_tokens.dim(0), t = joint_tokens.dim(1), d = joint_tokens.dim(2);
    const std::size_t m2 = window * window;
    if (t != num_slices * m2) throw DimensionError("csw_msa: joint token count != slices * M^2");
    if (g != batch * nwin) throw DimensionError("csw_msa: group count != batch * windows");
    if (d % heads != 0) throw DimensionError("csw_msa: dim not divisible by heads");
    const std::size_t dh = d / heads;
    if (params.qkv_w.dim(0) != d || params.qkv_w.dim(1) != 3 * d) throw DimensionError("csw_msa: qkv weight shape");
    const std::size_t span2 = (2 * window - 1) * (2 * window - 1);
    if (params.bias_table.dim(0) != heads || params.bias_table.dim(1) != span2)
        throw DimensionError("csw_msa: bias table shape");

    Tensor<T> flat = reshape(joint_tokens, {g * t, d});
    Tensor<T> qkv = add_bias_rows(matmul(flat, params.qkv_w), params.qkv_b);

    // Split into per-head [g*heads, t, dh] for the three projections.
    auto head_view = [&](std::size_t part) {
        std::vector<std::int64_t> idx(g * heads * t * dh);
        std::size_t i = 0;
        for (std::size_t gi = 0; gi < g; ++gi)
            for (std::size_t hh = 0; hh < heads; ++hh)
                for (std::size_t ti = 0; ti < t; ++ti)
                    for (std::size_t c = 0; c < dh; ++c)
                        idx[i++] = static_cast<std::int64_t>((gi * t + ti) * 3 * d + part * d + hh * dh + c);
        return gather(qkv, std::move(idx), {g * heads, t, dh});
    };
    Tensor<T> q = head_view(0);
    Tensor<T> k = head_view(1);
    Tensor<T> v = head_view(2);

    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor<T> scores = batched_matmul(q, k, /*trans_b=*/true, inv_sqrt);

    // Relative position bias, indexed by in-plane displacement only and tiled
    // over the slice blocks.
    {
        const auto rel = relative_position_index(window);
        std::vector<std::int64_t> bidx(heads * t * t);
        std::size_t i = 0;
        for (std::size_t hh = 0; hh < heads; ++hh)
            for (std::size_t p = 0; p < t; ++p)
                for (std::size_t qq = 0; qq < t; ++qq)
                    bidx[i++] = static_cast<std::int64_t>(hh * span2 +
                                                          static_cast<std::size_t>(rel[(p % m2) * m2 + qq % m2]));
        Tensor<T> bias = gather(params.bias_table, std::move(bidx), {heads, t, t});
        scores = add_head_bias(scores, bias, g, heads);
    }
    if (mask != nullptr) scores = add_window_mask(scores, *mask, batch, nwin, heads, t);

    Tensor<T> attn = softmax_lastdim(scores);
    Tensor<T> ctx = batched_matmul(attn, v);  // [g*heads, t, dh]

    // Merge heads back to [g*t, d].
    std::vector<std::int64_t> midx(g * t * d);
    {
        std::size_t i = 0;
        for (std::size_t gi = 0; gi < g; ++gi)
            for (std::size_t ti = 0; ti < t; ++ti)
                for (std::size_t hh = 0; hh < heads; ++hh)
                    for (std::size_t c = 0; c < dh; ++c)
                        midx[i++] = static_cast<std::int64_t>(((gi * heads + hh) * t + ti) * dh + c);
    }
    Tensor<T> merged = gather(ctx, std::move(midx), {g * t, d});
    Tensor<T> out = add_bias_rows(matmul(merged, params.proj_w), params.proj_b);
    return reshape(out, {g, t, d});
}

template <typename T>
std::vector<WindowGrid<T>> csw_msa(const std::vector<WindowGrid<T>>& slices, const CswMsaParams<T>& params,
                                   std::size_t heads, const std::vector<T>* mask) {
    if (slices.empty()) throw InputError("csw_msa: no slices");
    const auto& g0 = slices[0];
    for (const auto& s : slices)
        if (s.window != g0.window || s.grid_h != g0.grid_h || s.grid_w != g0.grid_w || s.dim != g0.dim ||
            s.batch != g0.batch)
            throw DimensionError("csw_msa: slice grids differ in geometry");
    std::vector<Tensor<T>> parts;
    parts.reserve(slices.size());
    for (const auto& s : slices) parts.push_back(s.tokens);
    Tensor<T> joint = slices.size() == 1 ? slices[0].tokens : concat(parts, 1);
    Tensor<T> out = csw_msa_joint(joint, params, heads, g0.window, slices.size(), g0.batch, g0.num_windows(), mask);
    const std::size_t m2 = g0.window * g0.window;
    std::vector<WindowGrid<T>> result(slices.size());
    for (std::size_t si = 0; si < slices.size(); ++si) {
        result[si] = slices[si];
        result[si].tokens = slices.size() == 1 ? out : narrow(out, 1, si * m2, m2);
    }
    return result;
}

namespace {

// One pre-norm layer over the joint tokens: LN -> (S)CSW-MSA -> residual ->
// LN -> MLP -> residual.
template <typename T>
Tensor<T> if_trans_layer_joint(const Tensor<T>& joint, const IfTransLayerParams<T>& lp, std::size_t heads,
                               std::size_t window, std::size_t num_slices, std::size_t batch, std::size_t nwin,
                               const std::vector<T>* mask) {
    Tensor<T> normed = layer_norm(joint, lp.ln1_g, lp.ln1_b);
    Tensor<T> msa = csw_msa_joint(normed, lp.msa, heads, window, num_slices, batch, nwin, mask);
    Tensor<T> x1 = add(joint, msa);
    Tensor<T> n2 = layer_norm(x1, lp.ln2_g, lp.ln2_b);
    const std::size_t g = joint.dim(0), t = joint.dim(1), d = joint.dim(2);
    const std::size_t hidden = lp.mlp1_w.dim(1);
    Tensor<T> h1 = add_bias_rows(matmul(reshape(n2, {g * t, d}), lp.mlp1_w), lp.mlp1_b);
    Tensor<T> h2 = gelu(h1);
    Tensor<T> h3 = add_bias_rows(matmul(h2, lp.mlp2_w), lp.mlp2_b);
    (void)hidden;
    return add(x1, reshape(h3, {g, t, d}));
}

}  // namespace

template <typename T>
std::vector<Tensor<T>> if_trans_block(const std::vector<Tensor<T>>& slices, const IfTransConfig& cfg,
                                      const IfTransParams<T>& params) {
    if (slices.empty()) throw InputError("if_trans_block: no inputs");
    const auto dm0 = map_dims(slices[0], "if_trans_block");
    for (const auto& s : slices)
        if (s.shape() != slices[0].shape()) throw DimensionError("if_trans_block: slice shapes differ");

    const std::size_t m = cfg.window;
    const std::size_t ph = (m - dm0.h % m) % m, pw = (m - dm0.w % m) % m;
    const std::size_t hp = dm0.h + ph, wp = dm0.w + pw;
    const std::size_t shift = m / 2;
    const std::size_t nwin = (hp / m) * (wp / m), m2 = m * m;
    const std::size_t num_slices = slices.size();

    auto to_rank4 = [&](const Tensor<T>& x) {
        return x.rank() == 3 ? reshape(x, {1, dm0.d, dm0.h, dm0.w}) : x;
    };
    std::vector<Tensor<T>> cur;
    cur.reserve(num_slices);
    for (const auto& s : slices) {
        Tensor<T> x = to_rank4(s);
        if (ph || pw) x = pad2d_bottom_right(x, ph, pw);
        cur.push_back(x);
    }
    const std::vector<Tensor<T>> original = cur;

    std::vector<T> mask;
    if (shift > 0) mask = shift_attention_mask<T>(hp, wp, m, shift, num_slices);

    for (std::size_t layer = 0; layer < 2; ++layer) {
        const bool shifted = layer == 1 && shift > 0;
        std::vector<Tensor<T>> inputs = cur;
        if (layer == 1 && !cfg.joint_neighbor_update) {
            // Neighbors re-read the encoder features; only the target carries
            // the first layer's update.
            for (std::size_t si = 0; si < num_slices; ++si)
                if (si != num_slices / 2) inputs[si] = original[si];
        }
        std::vector<Tensor<T>> parts;
        parts.reserve(num_slices);
        for (auto& x : inputs) {
            Tensor<T> s = shifted ? cyclic_shift(x, -static_cast<std::ptrdiff_t>(shift),
                                                 -static_cast<std::ptrdiff_t>(shift))
                                  : x;
            parts.push_back(partition_windows(s, m).tokens);
        }
        Tensor<T> joint = num_slices == 1 ? parts[0] : concat(parts, 1);
        Tensor<T> out = if_trans_layer_joint(joint, params.layers[layer], cfg.heads, m, num_slices, dm0.b, nwin,
                                             shifted ? &mask : nullptr);
        std::vector<Tensor<T>> next(num_slices);
        for (std::size_t si = 0; si < num_slices; ++si) {
            WindowGrid<T> grid;
            grid.window = m;
            grid.batch = dm0.b;
            grid.grid_h = hp / m;
            grid.grid_w = wp / m;
            grid.dim = dm0.d;
            grid.from_rank3 = false;
            grid.tokens = num_slices == 1 ? out : narrow(out, 1, si * m2, m2);
            Tensor<T> map = reverse_windows(grid, hp, wp);
            if (shifted)
                map = cyclic_shift(map, static_cast<std::ptrdiff_t>(shift), static_cast<std::ptrdiff_t>(shift));
            next[si] = map;
        }
        cur = std::move(next);
    }

    std::vector<Tensor<T>> result(num_slices);
    for (std::size_t si = 0; si < num_slices; ++si) {
        Tensor<T> x = cur[si];
        if (ph || pw) x = crop2d_top_left(x, dm0.h, dm0.w);
        result[si] = dm0.rank3 ? reshape(x, {dm0.d, dm0.h, dm0.w}) : x;
    }
    return result;
}

#define MOSF_INSTANTIATE_ATTN(T)                                                                                  \
    template struct WindowGrid<T>;                                                                               \
    template WindowGrid<T> partition_windows<T>(const Tensor<T>&, std::size_t);                                   \
    template Tensor<T> reverse_windows<T>(const WindowGrid<T>&, std::size_t, std::size_t);                        \
    template Tensor<T> cyclic_shift<T>(const Tensor<T>&, std::ptrdiff_t, std::ptrdiff_t);                         \
    template std::vector<T> shift_attention_mask<T>(std::size_t, std::size_t, std::size_t, std::size_t,          \
                                                    std::size_t);                                                 \
    template std::vector<WindowGrid<T>> csw_msa<T>(const std::vector<WindowGrid<T>>&, const CswMsaParams<T>&,    \
                                                   std::size_t, const std::vector<T>*);                          \
    template Tensor<T> csw_msa_joint<T>(const Tensor<T>&, const CswMsaParams<T>&, std::size_t, std::size_t,      \
                                        std::size_t, std::size_t, std::size_t, const std::vector<T>*);           \
    template std::vector<Tensor<T>> if_trans_block<T>(const std::vector<Tensor<T>>&, const IfTransConfig&,       \
                                                      const IfTransParams<T>&);

MOSF_INSTANTIATE_ATTN(float)
MOSF_INSTANTIATE_ATTN(double)

}  // namespace mosf
