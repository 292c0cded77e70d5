#include "mosformer/model.hpp"

#include <algorithm>
#include <cmath>

namespace mosf {

void ModelConfig::validate() const {
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    if (window < 1) throw ConfigError("model: window must be >= 1");
    if (mlp_ratio <= 0) throw ConfigError("model: mlp_ratio must be positive");
    if (momentum_m < 0 || momentum_m >= 1) throw ConfigError("model: momentum coefficient must lie in [0,1)");
    bool any = false;
    for (bool f : fuse_scale) any = any || f;
    if (!any && !fusion_bypass) throw ConfigError("model: fusion scale set must be non-empty");
    const std::array<std::size_t, 5> dims{encoder.stem_channels, encoder.stage_channels[0], encoder.stage_channels[1],
                                          encoder.stage_channels[2], encoder.stage_channels[3]};
    for (std::size_t site = 0; site < 5; ++site) {
        const bool used = site < 4 ? fuse_scale[site] : fuse_scale[3];
        if (used && !fusion_bypass && dims[site] % heads[site] != 0)
            throw ConfigError("model: feature dim not divisible by head count at fusion site " + std::to_string(site));
    }
}

namespace {

template <typename T>
Tensor<T> normal_init(Shape shape, Rng& rng, double stddev) {
    return Tensor<T>::randn(std::move(shape), rng, static_cast<T>(stddev));
}

template <typename T>
IfTransLayerParams<T> make_ift_layer(ParamStore<T>& store, const std::string& prefix, std::size_t d,
                                     std::size_t heads, std::size_t window, double mlp_ratio, Rng& rng) {
    IfTransLayerParams<T> lp;
    const auto hidden = static_cast<std::size_t>(static_cast<double>(d) * mlp_ratio);
    const std::size_t span2 = (2 * window - 1) * (2 * window - 1);
    lp.ln1_g = store.add(prefix + ".ln1.gamma", Tensor<T>::ones({d}));
    lp.ln1_b = store.add(prefix + ".ln1.beta", Tensor<T>::zeros({d}));
    lp.msa.qkv_w = store.add(prefix + ".qkv.w", normal_init<T>({d, 3 * d}, rng, 0.02));
    lp.msa.qkv_b = store.add(prefix + ".qkv.b", Tensor<T>::zeros({3 * d}));
    lp.msa.proj_w = store.add(prefix + ".proj.w", normal_init<T>({d, d}, rng, 0.02));
    lp.msa.proj_b = store.add(prefix + ".proj.b", Tensor<T>::zeros({d}));
    lp.msa.bias_table = store.add(prefix + ".bias_table", normal_init<T>({heads, span2}, rng, 0.02));
    lp.ln2_g = store.add(prefix + ".ln2.gamma", Tensor<T>::ones({d}));
    lp.ln2_b = store.add(prefix + ".ln2.beta", Tensor<T>::zeros({d}));
    lp.mlp1_w = store.add(prefix + ".mlp1.w", normal_init<T>({d, hidden}, rng, 0.02));
    lp.mlp1_b = store.add(prefix + ".mlp1.b", Tensor<T>::zeros({hidden}));
    lp.mlp2_w = store.add(prefix + ".mlp2.w", normal_init<T>({hidden, d}, rng, 0.02));
    lp.mlp2_b = store.add(prefix + ".mlp2.b", Tensor<T>::zeros({d}));
    return lp;
}

template <typename T>
Tensor<T> kaiming_conv_w(Shape shape, Rng& rng) {
    const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
    return Tensor<T>::randn(std::move(shape), rng, static_cast<T>(std::sqrt(2.0 / fan_in)));
}

constexpr std::array<const char*, 5> kIftSiteNames{"ift.k1", "ift.k2", "ift.k3", "ift.k4", "ift.k4b"};

}  // namespace

template <typename T>
MosformerModel<T>::MosformerModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::seeded(init_seed);

    target_enc_ = ResidualEncoder<T>(cfg_.encoder, store_, kTargetEncoderPrefix, rng);
    if (cfg_.encoder_mode != EncoderMode::kSingle) {
        Rng rng2 = rng;  // same draw sequence; immediately overwritten by the copy below
        neighbor_enc_ = std::make_unique<ResidualEncoder<T>>(cfg_.encoder, store_, kMomentumEncoderPrefix, rng2);
        dual_state_ = make_dual_state(store_, kTargetEncoderPrefix, kMomentumEncoderPrefix,
                                      static_cast<T>(cfg_.momentum_m), cfg_.blend_buffers, /*copy_now=*/true);
        if (cfg_.encoder_mode == EncoderMode::kDualMomentum)
            store_.set_learnable_requires_grad(kMomentumEncoderPrefix, false);
    }

    const auto dims = target_enc_.feature_dims();
    if (!cfg_.fusion_bypass) {
        for (std::size_t site = 0; site < 5; ++site) {
            const bool used = site < 4 ? cfg_.fuse_scale[site] : cfg_.fuse_scale[3];
            if (!used) continue;
            auto p = std::make_unique<IfTransParams<T>>();
            for (std::size_t layer = 0; layer < 2; ++layer)
                p->layers[layer] =
                    make_ift_layer(store_, std::string(kIftSiteNames[site]) + ".l" + std::to_string(layer),
                                   dims[site], cfg_.heads[site], cfg_.window, cfg_.mlp_ratio, rng);
            ift_[site] = std::move(p);
        }
    }

    // Decoder: d4 merges the two 1/16 maps, then three upsampling merges.
    const std::array<std::size_t, 4> skip_ch{dims[3], dims[2], dims[1], dims[0]};  // per decoder stage
    std::size_t in_ch = dims[4];
    for (std::size_t di = 0; di < 4; ++di) {
        const std::string prefix = "dec.d" + std::to_string(4 - di);
        const std::size_t out_ch = cfg_.decoder_channels[di];
        const std::size_t cat_ch = in_ch + skip_ch[di];
        DecoderBlock blk;
        blk.w1 = store_.add(prefix + ".conv1.w", kaiming_conv_w<T>({out_ch, cat_ch, 3, 3}, rng));
        blk.g1 = store_.add(prefix + ".bn1.gamma", Tensor<T>::ones({out_ch}));
        blk.b1 = store_.add(prefix + ".bn1.beta", Tensor<T>::zeros({out_ch}));
        blk.rm1 = store_.add(prefix + ".bn1.running_mean", Tensor<T>::zeros({out_ch}), false);
        blk.rv1 = store_.add(prefix + ".bn1.running_var", Tensor<T>::ones({out_ch}), false);
        blk.w2 = store_.add(prefix + ".conv2.w", kaiming_conv_w<T>({out_ch, out_ch, 3, 3}, rng));
        blk.g2 = store_.add(prefix + ".bn2.gamma", Tensor<T>::ones({out_ch}));
        blk.b2 = store_.add(prefix + ".bn2.beta", Tensor<T>::zeros({out_ch}));
        blk.rm2 = store_.add(prefix + ".bn2.running_mean", Tensor<T>::zeros({out_ch}), false);
        blk.rv2 = store_.add(prefix + ".bn2.running_var", Tensor<T>::ones({out_ch}), false);
        decoder_[di] = std::move(blk);
        in_ch = out_ch;
    }

    auto make_head = [&](const std::string& name, std::size_t in_c) {
        Head hd;
        hd.w = store_.add(name + ".w", kaiming_conv_w<T>({cfg_.num_classes, in_c, 1, 1}, rng));
        hd.b = store_.add(name + ".b", Tensor<T>::zeros({cfg_.num_classes}));
        return hd;
    };
    head_full_ = make_head("head.full", cfg_.decoder_channels[3]);
    head_half_ = make_head("head.half", cfg_.decoder_channels[2]);
    head_quarter_ = make_head("head.quarter", cfg_.decoder_channels[1]);
}

template <typename T>
Tensor<T> MosformerModel<T>::decode_block(const DecoderBlock& blk, const Tensor<T>& x, bool training) const {
    auto& b = const_cast<DecoderBlock&>(blk);
    Tensor<T> y = conv2d(x, b.w1, Tensor<T>(), 1, 1);
    y = relu(batch_norm2d(y, b.g1, b.b1, b.rm1, b.rv1, training, training, static_cast<T>(cfg_.encoder.bn_momentum)));
    y = conv2d(y, b.w2, Tensor<T>(), 1, 1);
    y = relu(batch_norm2d(y, b.g2, b.b2, b.rm2, b.rv2, training, training, static_cast<T>(cfg_.encoder.bn_momentum)));
    return y;
}

template <typename T>
Tensor<T> MosformerModel<T>::fuse_site(std::size_t site, const Tensor<T>& target_map,
                                       const std::vector<Tensor<T>>& neighbor_maps, std::size_t s) const {
    if (!ift_[site]) return target_map;
    IfTransConfig icfg;
    icfg.window = cfg_.window;
    icfg.heads = cfg_.heads[site];
    icfg.mlp_ratio = cfg_.mlp_ratio;
    icfg.joint_neighbor_update = cfg_.joint_neighbor_update;
    std::vector<Tensor<T>> slices;
    slices.reserve(2 * s + 1);
    for (std::size_t i = 0; i < s; ++i) slices.push_back(neighbor_maps[i]);
    slices.push_back(target_map);
    for (std::size_t i = s; i < 2 * s; ++i) slices.push_back(neighbor_maps[i]);
    auto fused = if_trans_block(slices, icfg, *ift_[site]);
    return fused[s];
}

template <typename T>
LogitStack<T> MosformerModel<T>::forward(const Tensor<T>& target, const std::vector<Tensor<T>>& neighbors,
                                         bool training) {
    const std::size_t s = cfg_.neighborhood;
    if (neighbors.size() != 2 * s) throw InputError("forward: expected 2*s neighbor slices");

    auto [tp, nps] = dual_encode(target_enc_, neighbor_enc_.get(), target, neighbors, training);

    // Fused skip maps: four scales plus the stage-4 bottom.
    std::array<Tensor<T>, 5> fused;
    for (std::size_t site = 0; site < 5; ++site) {
        Tensor<T> tmap = site < 4 ? tp.levels[site] : tp.bottom;
        std::vector<Tensor<T>> nmaps;
        nmaps.reserve(nps.size());
        for (auto& np : nps) nmaps.push_back(site < 4 ? np.levels[site] : np.bottom);
        fused[site] = fuse_site(site, tmap, nmaps, s);
    }

    Tensor<T> d = decode_block(decoder_[0], concat<T>({fused[4], fused[3]}, 1), training);
    d = decode_block(decoder_[1], concat<T>({upsample_bilinear2x(d), fused[2]}, 1), training);
    Tensor<T> d_quarter = d;  // 1/8
    d = decode_block(decoder_[2], concat<T>({upsample_bilinear2x(d), fused[1]}, 1), training);
    Tensor<T> d_half = d;
    d = decode_block(decoder_[3], concat<T>({upsample_bilinear2x(d), fused[0]}, 1), training);

    auto head = [&](const Head& hd, const Tensor<T>& x) {
        return conv2d(upsample_bilinear2x(x), hd.w, hd.b, 1, 0);
    };
    LogitStack<T> out;
    out.full = head(head_full_, d);               // 1/2 -> 1/1
    out.half = head(head_half_, d_half);          // 1/4 -> 1/2
    out.quarter = head(head_quarter_, d_quarter);  // 1/8 -> 1/4
    return out;
}

template <typename T>
std::size_t MosformerModel<T>::neighbor_index(std::size_t slice, std::ptrdiff_t offset, std::size_t depth) const {
    if (depth == 0) throw InputError("neighbor_index: empty volume");
    auto j = static_cast<std::ptrdiff_t>(slice) + offset;
    const auto dmax = static_cast<std::ptrdiff_t>(depth) - 1;
    if (cfg_.boundary == BoundaryMode::kClamp) {
        j = std::clamp<std::ptrdiff_t>(j, 0, dmax);
    } else {
        // reflect: ... 2 1 | 0 1 2 ... d-1 | d-2 d-3 ...
        while (j < 0 || j > dmax) {
            if (j < 0) j = -j;
            if (j > dmax) j = 2 * dmax - j;
        }
    }
    return static_cast<std::size_t>(j);
}

template <typename T>
LabelVolume MosformerModel<T>::predict_volume(const Volume& volume) const {
    if (volume.d == 0) throw InputError("predict_volume: empty volume");
    if (volume.c != cfg_.in_channels) throw DimensionError("predict_volume: channel count differs from config");
    NoGradGuard ng;
    auto& self = const_cast<MosformerModel<T>&>(*this);
    const std::size_t s = cfg_.neighborhood;

    LabelVolume out;
    out.h = volume.h;
    out.w = volume.w;
    out.d = volume.d;
    out.spacing = volume.spacing;
    out.num_classes = static_cast<std::uint32_t>(cfg_.num_classes);
    out.v.assign(volume.h * volume.w * volume.d, 0);

    auto slice_tensor = [&](std::size_t z) {
        const float* src = volume.slice(z);
        std::vector<T> data(volume.slice_elems());
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(src[i]);
        return Tensor<T>::from_data({1, volume.c, volume.h, volume.w}, std::move(data));
    };

    for (std::size_t z = 0; z < volume.d; ++z) {
        Tensor<T> target = slice_tensor(z);
        std::vector<Tensor<T>> neighbors;
        neighbors.reserve(2 * s);
        for (std::ptrdiff_t off = -static_cast<std::ptrdiff_t>(s); off <= static_cast<std::ptrdiff_t>(s); ++off) {
            if (off == 0) continue;
            neighbors.push_back(slice_tensor(neighbor_index(z, off, volume.d)));
        }
        LogitStack<T> logits = self.forward(target, neighbors, /*training=*/false);
        const auto& lv = logits.full.data();
        const std::size_t hw = volume.h * volume.w;
        for (std::size_t i = 0; i < hw; ++i) {
            std::size_t best = 0;
            T best_v = lv[i];
            for (std::size_t c = 1; c < cfg_.num_classes; ++c)
                if (lv[c * hw + i] > best_v) {
                    best_v = lv[c * hw + i];
                    best = c;
                }
            out.v[z * hw + i] = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> MosformerModel<T>::trainable_params() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : store_.entries())
        if (e.learnable && e.tensor.requires_grad()) out.push_back(e.tensor);
    return out;
}

template class MosformerModel<float>;
template class MosformerModel<double>;

}  // namespace mosf
