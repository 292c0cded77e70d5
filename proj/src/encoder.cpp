#include "mosformer/encoder.hpp"

#include <cmath>

namespace mosf {

namespace {

template <typename T>
Tensor<T> kaiming_conv(Shape shape, Rng& rng) {
    // fan_in = C*kh*kw
    const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
    const double stddev = std::sqrt(2.0 / fan_in);
    return Tensor<T>::randn(std::move(shape), rng, static_cast<T>(stddev));
}

}  // namespace

template <typename T>
typename ResidualEncoder<T>::ConvBn ResidualEncoder<T>::make_conv_bn(ParamStore<T>& store, const std::string& name,
                                                                     std::size_t in_ch, std::size_t out_ch,
                                                                     std::size_t kernel, std::size_t stride,
                                                                     Rng& rng) {
    ConvBn cb;
    cb.stride = stride;
    cb.pad = kernel / 2;
    cb.w = store.add(name + ".conv.w", kaiming_conv<T>({out_ch, in_ch, kernel, kernel}, rng));
    cb.gamma = store.add(name + ".bn.gamma", Tensor<T>::ones({out_ch}));
    cb.beta = store.add(name + ".bn.beta", Tensor<T>::zeros({out_ch}));
    cb.rmean = store.add(name + ".bn.running_mean", Tensor<T>::zeros({out_ch}), /*learnable=*/false);
    cb.rvar = store.add(name + ".bn.running_var", Tensor<T>::ones({out_ch}), /*learnable=*/false);
    return cb;
}

template <typename T>
ResidualEncoder<T>::ResidualEncoder(const EncoderConfig& cfg, ParamStore<T>& store, const std::string& prefix,
                                    Rng& rng)
    : cfg_(cfg) {
    stem_ = make_conv_bn(store, prefix + "stem", cfg.in_channels, cfg.stem_channels, cfg.stem_kernel, 2, rng);
    std::size_t in_ch = cfg.stem_channels;
    for (std::size_t si = 0; si < 4; ++si) {
        const std::size_t out_ch = cfg.stage_channels[si];
        const std::size_t blocks = std::max<std::size_t>(1, cfg.blocks_per_stage[si]);
        for (std::size_t bi = 0; bi < blocks; ++bi) {
            const std::size_t stride = bi == 0 ? kStageStrides[si] : 1;
            const std::string bp = prefix + "s" + std::to_string(si + 1) + ".b" + std::to_string(bi);
            Block blk;
            if (cfg.bottleneck) {
                const std::size_t mid = std::max<std::size_t>(1, out_ch / 4);
                blk.convs.push_back(make_conv_bn(store, bp + ".c1", in_ch, mid, 1, 1, rng));
                blk.convs.push_back(make_conv_bn(store, bp + ".c2", mid, mid, 3, stride, rng));
                blk.convs.push_back(make_conv_bn(store, bp + ".c3", mid, out_ch, 1, 1, rng));
            } else {
                blk.convs.push_back(make_conv_bn(store, bp + ".c1", in_ch, out_ch, 3, stride, rng));
                blk.convs.push_back(make_conv_bn(store, bp + ".c2", out_ch, out_ch, 3, 1, rng));
            }
            if (stride != 1 || in_ch != out_ch) {
                blk.has_down = true;
                blk.down = make_conv_bn(store, bp + ".down", in_ch, out_ch, 1, stride, rng);
            }
            stages_[si].push_back(std::move(blk));
            in_ch = out_ch;
        }
    }
}

template <typename T>
Tensor<T> ResidualEncoder<T>::conv_bn(const ConvBn& cb, const Tensor<T>& x, const EncodeMode& mode) const {
    Tensor<T> y = conv2d(x, cb.w, Tensor<T>(), cb.stride, cb.pad);
    auto& rm = const_cast<Tensor<T>&>(cb.rmean);
    auto& rv = const_cast<Tensor<T>&>(cb.rvar);
    return batch_norm2d(y, cb.gamma, cb.beta, rm, rv, mode.training, mode.update_running,
                        static_cast<T>(cfg_.bn_momentum));
}

template <typename T>
FeaturePyramid<T> ResidualEncoder<T>::forward(const Tensor<T>& x, const EncodeMode& mode) const {
    Tensor<T> in = x;
    if (in.rank() == 3) in = reshape(in, {1, in.dim(0), in.dim(1), in.dim(2)});
    if (in.rank() != 4) throw DimensionError("encode: expects [C,H,W] or [B,C,H,W]");
    if (in.dim(1) != cfg_.in_channels) throw DimensionError("encode: channel count differs from config");
    if (in.dim(2) % 16 != 0 || in.dim(3) % 16 != 0) throw DimensionError("encode: H and W must be divisible by 16");

    FeaturePyramid<T> pyr;
    Tensor<T> cur = relu(conv_bn(stem_, in, mode));
    pyr.levels[0] = cur;
    for (std::size_t si = 0; si < 4; ++si) {
        for (const auto& blk : stages_[si]) {
            Tensor<T> main = cur;
            for (std::size_t ci = 0; ci < blk.convs.size(); ++ci) {
                main = conv_bn(blk.convs[ci], main, mode);
                if (ci + 1 < blk.convs.size()) main = relu(main);
            }
            Tensor<T> skip = blk.has_down ? conv_bn(blk.down, cur, mode) : cur;
            cur = relu(add(main, skip));
        }
        if (si < 3)
            pyr.levels[si + 1] = cur;
        else
            pyr.bottom = cur;
    }
    return pyr;
}

template <typename T>
void momentum_update(DualEncoderState<T>& state) {
    if (state.m < T(0) || state.m >= T(1)) throw ConfigError("momentum_update: m must lie in [0,1)");
    const T m = state.m;
    const T om = T(1) - m;
    auto blend = [&](Tensor<T>& t1, Tensor<T>& t2, bool do_blend) {
        if (t1.size() != t2.size()) throw ConfigError("momentum_update: paired parameter extents differ");
        auto& a = t2.data();
        const auto& b = t1.data();
        if (do_blend) {
            for (std::size_t i = 0; i < a.size(); ++i) a[i] = m * a[i] + om * b[i];
        } else {
            a = b;
        }
    };
    for (auto& [t1, t2] : state.params) blend(t1, t2, true);
    for (auto& [t1, t2] : state.buffers) blend(t1, t2, state.blend_buffers);
}

template <typename T>
DualEncoderState<T> make_dual_state(ParamStore<T>& store, const std::string& target_prefix,
                                    const std::string& momentum_prefix, T m, bool blend_buffers, bool copy_now) {
    DualEncoderState<T> state;
    state.m = m;
    state.blend_buffers = blend_buffers;
    for (auto& e : store.entries()) {
        if (e.name.rfind(target_prefix, 0) != 0) continue;
        const std::string peer = momentum_prefix + e.name.substr(target_prefix.size());
        Tensor<T>& t2 = store.get(peer);
        if (t2.shape() != e.tensor.shape()) throw ConfigError("momentum pairing: shape mismatch at " + peer);
        if (copy_now) t2.data() = e.tensor.data();
        if (e.learnable)
            state.params.push_back({e.tensor, t2});
        else
            state.buffers.push_back({e.tensor, t2});
    }
    if (state.params.empty()) throw ConfigError("momentum pairing: no parameters under " + target_prefix);
    return state;
}

template <typename T>
std::pair<FeaturePyramid<T>, std::vector<FeaturePyramid<T>>> dual_encode(const ResidualEncoder<T>& target_enc,
                                                                         const ResidualEncoder<T>* neighbor_enc,
                                                                         const Tensor<T>& target,
                                                                         const std::vector<Tensor<T>>& neighbors,
                                                                         bool training) {
    EncodeMode target_mode{training, training};
    FeaturePyramid<T> tp = target_enc.forward(target, target_mode);
    std::vector<FeaturePyramid<T>> nps;
    if (neighbors.empty()) return {tp, nps};

    for (const auto& nb : neighbors)
        if (nb.shape() != target.shape()) throw InputError("dual_encode: neighbor shape differs from target");

    // One stacked pass keeps BN batch statistics shared across neighbors.
    std::vector<Tensor<T>> as4;
    as4.reserve(neighbors.size());
    for (const auto& nb : neighbors)
        as4.push_back(nb.rank() == 3 ? reshape(nb, {1, nb.dim(0), nb.dim(1), nb.dim(2)}) : nb);
    Tensor<T> stacked = as4.size() == 1 ? as4[0] : concat(as4, 0);
    EncodeMode nb_mode{training, false};
    const ResidualEncoder<T>& enc = neighbor_enc ? *neighbor_enc : target_enc;
    FeaturePyramid<T> all = enc.forward(stacked, nb_mode);

    const std::size_t per = as4[0].dim(0);
    nps.resize(neighbors.size());
    for (std::size_t ni = 0; ni < neighbors.size(); ++ni) {
        for (std::size_t li = 0; li < 4; ++li) nps[ni].levels[li] = narrow(all.levels[li], 0, ni * per, per);
        nps[ni].bottom = narrow(all.bottom, 0, ni * per, per);
    }
    return {tp, nps};
}

#define MOSF_INSTANTIATE_ENC(T)                                                                                    \
    template class ResidualEncoder<T>;                                                                            \
    template void momentum_update<T>(DualEncoderState<T>&);                                                       \
    template DualEncoderState<T> make_dual_state<T>(ParamStore<T>&, const std::string&, const std::string&, T,    \
                                                    bool, bool);                                                  \
    template std::pair<FeaturePyramid<T>, std::vector<FeaturePyramid<T>>> dual_encode<T>(                         \
        const ResidualEncoder<T>&, const ResidualEncoder<T>*, const Tensor<T>&, const std::vector<Tensor<T>>&,    \
        bool);

MOSF_INSTANTIATE_ENC(float)
MOSF_INSTANTIATE_ENC(double)

}  // namespace mosf
