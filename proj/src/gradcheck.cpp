#include "mosformer/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <ostream>

#include "mosformer/losses.hpp"
#include "mosformer/model.hpp"

namespace mosf {

namespace {

template <typename T>
struct FdProblem {
    std::vector<Tensor<T>> leaves;
    std::function<Tensor<T>()> forward;  // fresh scalar graph over the leaves
};

// Max relative deviation between reverse-mode and central-difference
// gradients over a deterministic sample of coordinates.
template <typename T>
double fd_rel_error(FdProblem<T>& prob, T h, std::size_t coords_per_leaf, bool corrupt) {
    for (auto& leaf : prob.leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    Tensor<T> out = prob.forward();
    out.backward();
    std::vector<std::vector<T>> analytic;
    analytic.reserve(prob.leaves.size());
    for (auto& leaf : prob.leaves) analytic.push_back(leaf.grad());
    if (corrupt && !analytic.empty() && !analytic[0].empty()) analytic[0][0] = analytic[0][0] * T(2) + T(1);

    double num = 0.0, den = 1e-8;
    for (std::size_t li = 0; li < prob.leaves.size(); ++li) {
        auto& leaf = prob.leaves[li];
        const std::size_t n = leaf.size();
        const std::size_t step = std::max<std::size_t>(1, n / std::max<std::size_t>(1, coords_per_leaf));
        for (std::size_t i = 0; i < n; i += step) {
            const T saved = leaf.data()[i];
            NoGradGuard ng;
            leaf.data()[i] = saved + h;
            const double fp = static_cast<double>(prob.forward().item());
            leaf.data()[i] = saved - h;
            const double fm = static_cast<double>(prob.forward().item());
            leaf.data()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * static_cast<double>(h));
            const double a = static_cast<double>(analytic[li][i]);
            num = std::max(num, std::abs(a - numeric));
            den = std::max({den, std::abs(a), std::abs(numeric)});
        }
    }
    return num / den;
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, Rng& rng) {
    Tensor<T> w = Tensor<T>::uniform(x.shape(), rng, T(-1), T(1));
    return sum_all(mul(x, w));
}

// ---- unit builders ----------------------------------------------------

template <typename T>
FdProblem<T> unit_matmul(Rng rng) {
    FdProblem<T> p;
    Tensor<T> a = Tensor<T>::randn({3, 4}, rng);
    Tensor<T> b = Tensor<T>::randn({4, 2}, rng);
    Tensor<T> w = Tensor<T>::uniform({3, 2}, rng, T(-1), T(1));
    p.leaves = {a, b};
    p.forward = [=]() { return sum_all(mul(matmul(a, b), w)); };
    return p;
}

template <typename T>
FdProblem<T> unit_softmax(Rng rng) {
    FdProblem<T> p;
    Tensor<T> x = Tensor<T>::randn({5, 7}, rng);
    Tensor<T> w = Tensor<T>::uniform({5, 7}, rng, T(-1), T(1));
    p.leaves = {x};
    p.forward = [=]() { return sum_all(mul(softmax_lastdim(x), w)); };
    return p;
}

template <typename T>
FdProblem<T> unit_layer_norm(Rng rng) {
    FdProblem<T> p;
    Tensor<T> x = Tensor<T>::randn({6, 8}, rng);
    Tensor<T> g = Tensor<T>::uniform({8}, rng, T(0.5), T(1.5));
    Tensor<T> b = Tensor<T>::randn({8}, rng, T(0.2));
    Tensor<T> w = Tensor<T>::uniform({6, 8}, rng, T(-1), T(1));
    p.leaves = {x, g, b};
    p.forward = [=]() { return sum_all(mul(layer_norm(x, g, b), w)); };
    return p;
}

template <typename T>
FdProblem<T> unit_activation(Rng rng, bool use_gelu) {
    FdProblem<T> p;
    Tensor<T> x = Tensor<T>::randn({40}, rng);
    for (auto& v : x.data()) v += v >= T(0) ? T(0.3) : T(-0.3);  // keep clear of the relu kink
    Tensor<T> w = Tensor<T>::uniform({40}, rng, T(-1), T(1));
    p.leaves = {x};
    p.forward = [=]() { return sum_all(mul(use_gelu ? gelu(x) : relu(x), w)); };
    return p;
}

template <typename T>
FdProblem<T> unit_conv2d(Rng rng) {
    FdProblem<T> p;
    Tensor<T> x = Tensor<T>::randn({1, 2, 6, 6}, rng);
    Tensor<T> w = Tensor<T>::randn({3, 2, 3, 3}, rng, T(0.5));
    Tensor<T> b = Tensor<T>::randn({3}, rng, T(0.2));
    Tensor<T> ww = Tensor<T>::uniform({1, 3, 3, 3}, rng, T(-1), T(1));
    p.leaves = {x, w, b};
    p.forward = [=]() { return sum_all(mul(conv2d(x, w, b, 2, 1), ww)); };
    return p;
}

template <typename T>
FdProblem<T> unit_batch_norm(Rng rng) {
    FdProblem<T> p;
    Tensor<T> x = Tensor<T>::randn({2, 3, 4, 4}, rng);
    Tensor<T> g = Tensor<T>::uniform({3}, rng, T(0.5), T(1.5));
    Tensor<T> b = Tensor<T>::randn({3}, rng, T(0.2));
    auto rm = std::make_shared<Tensor<T>>(Tensor<T>::zeros({3}));
    auto rv = std::make_shared<Tensor<T>>(Tensor<T>::ones({3}));
    Tensor<T> w = Tensor<T>::uniform({2, 3, 4, 4}, rng, T(-1), T(1));
    p.leaves = {x, g, b};
    p.forward = [=]() {
        return sum_all(mul(batch_norm2d(x, g, b, *rm, *rv, /*training=*/true, /*update_running=*/false), w));
    };
    return p;
}

template <typename T>
FdProblem<T> unit_upsample(Rng rng) {
    FdProblem<T> p;
    Tensor<T> x = Tensor<T>::randn({1, 2, 5, 5}, rng);
    Tensor<T> w = Tensor<T>::uniform({1, 2, 10, 10}, rng, T(-1), T(1));
    p.leaves = {x};
    p.forward = [=]() { return sum_all(mul(upsample_bilinear2x(x), w)); };
    return p;
}

template <typename T>
CswMsaParams<T> random_msa_params(std::size_t d, std::size_t heads, std::size_t window, Rng& rng) {
    CswMsaParams<T> mp;
    mp.qkv_w = Tensor<T>::randn({d, 3 * d}, rng, T(0.3));
    mp.qkv_b = Tensor<T>::randn({3 * d}, rng, T(0.1));
    mp.proj_w = Tensor<T>::randn({d, d}, rng, T(0.3));
    mp.proj_b = Tensor<T>::randn({d}, rng, T(0.1));
    mp.bias_table = Tensor<T>::randn({heads, (2 * window - 1) * (2 * window - 1)}, rng, T(0.2));
    return mp;
}

template <typename T>
FdProblem<T> unit_csw_msa(Rng rng) {
    FdProblem<T> p;
    const std::size_t d = 4, m = 2, heads = 2;
    std::vector<Tensor<T>> maps;
    for (int i = 0; i < 3; ++i) maps.push_back(Tensor<T>::randn({d, 4, 4}, rng));
    CswMsaParams<T> mp = random_msa_params<T>(d, heads, m, rng);
    Tensor<T> w = Tensor<T>::uniform({4, m * m, d}, rng, T(-1), T(1));
    p.leaves = {maps[0], maps[1], maps[2], mp.qkv_w, mp.qkv_b, mp.proj_w, mp.proj_b, mp.bias_table};
    p.forward = [=]() {
        std::vector<WindowGrid<T>> grids;
        for (const auto& mp2 : maps) grids.push_back(partition_windows(mp2, m));
        auto out = csw_msa(grids, mp, heads);
        return sum_all(mul(out[1].tokens, w));
    };
    return p;
}

template <typename T>
FdProblem<T> unit_if_trans(Rng rng) {
    FdProblem<T> p;
    const std::size_t d = 4, m = 2, heads = 2;
    std::vector<Tensor<T>> maps;
    for (int i = 0; i < 3; ++i) maps.push_back(Tensor<T>::randn({d, 4, 4}, rng));
    auto params = std::make_shared<IfTransParams<T>>();
    for (int layer = 0; layer < 2; ++layer) {
        IfTransLayerParams<T> lp;
        lp.ln1_g = Tensor<T>::uniform({d}, rng, T(0.5), T(1.5));
        lp.ln1_b = Tensor<T>::randn({d}, rng, T(0.1));
        lp.msa = random_msa_params<T>(d, heads, m, rng);
        lp.ln2_g = Tensor<T>::uniform({d}, rng, T(0.5), T(1.5));
        lp.ln2_b = Tensor<T>::randn({d}, rng, T(0.1));
        lp.mlp1_w = Tensor<T>::randn({d, 2 * d}, rng, T(0.3));
        lp.mlp1_b = Tensor<T>::randn({2 * d}, rng, T(0.1));
        lp.mlp2_w = Tensor<T>::randn({2 * d, d}, rng, T(0.3));
        lp.mlp2_b = Tensor<T>::randn({d}, rng, T(0.1));
        params->layers[layer] = lp;
    }
    IfTransConfig cfg;
    cfg.window = m;
    cfg.heads = heads;
    cfg.mlp_ratio = 2.0;
    Tensor<T> w = Tensor<T>::uniform({d, 4, 4}, rng, T(-1), T(1));
    const auto& lp0 = params->layers[0];
    const auto& lp1 = params->layers[1];
    p.leaves = {maps[0],       maps[1],       maps[2],       lp0.ln1_g,     lp0.ln1_b,     lp0.msa.qkv_w,
                lp0.msa.qkv_b, lp0.msa.proj_w, lp0.msa.proj_b, lp0.msa.bias_table, lp0.ln2_g, lp0.ln2_b,
                lp0.mlp1_w,    lp0.mlp1_b,    lp0.mlp2_w,    lp0.mlp2_b,    lp1.ln1_g,     lp1.ln1_b,
                lp1.msa.qkv_w, lp1.msa.qkv_b, lp1.msa.proj_w, lp1.msa.proj_b, lp1.msa.bias_table, lp1.ln2_g,
                lp1.ln2_b,     lp1.mlp1_w,    lp1.mlp1_b,    lp1.mlp2_w,    lp1.mlp2_b};
    p.forward = [=]() {
        auto out = if_trans_block(maps, cfg, *params);
        return sum_all(mul(out[1], w));
    };
    return p;
}

LabelGrid random_labels(std::size_t b, std::size_t h, std::size_t w, std::size_t classes, Rng& rng) {
    LabelGrid grid;
    grid.b = b;
    grid.h = h;
    grid.w = w;
    grid.v.resize(grid.pixels());
    for (auto& v : grid.v) v = static_cast<std::int32_t>(rng.uniform_int(0, static_cast<std::int64_t>(classes) - 1));
    return grid;
}

template <typename T>
FdProblem<T> unit_ce(Rng rng) {
    FdProblem<T> p;
    Tensor<T> logits = Tensor<T>::randn({1, 3, 4, 4}, rng);
    auto labels = std::make_shared<LabelGrid>(random_labels(1, 4, 4, 3, rng));
    p.leaves = {logits};
    p.forward = [=]() { return ce_loss(logits, *labels); };
    return p;
}

template <typename T>
FdProblem<T> unit_dice(Rng rng) {
    FdProblem<T> p;
    Tensor<T> logits = Tensor<T>::randn({1, 3, 4, 4}, rng);
    auto labels = std::make_shared<LabelGrid>(random_labels(1, 4, 4, 3, rng));
    p.leaves = {logits};
    p.forward = [=]() { return dice_loss(logits, *labels); };
    return p;
}

template <typename T>
FdProblem<T> unit_deep_supervision(Rng rng) {
    FdProblem<T> p;
    Tensor<T> lf = Tensor<T>::randn({1, 3, 8, 8}, rng);
    Tensor<T> lh = Tensor<T>::randn({1, 3, 4, 4}, rng);
    Tensor<T> lq = Tensor<T>::randn({1, 3, 2, 2}, rng);
    auto labels = std::make_shared<LabelGrid>(random_labels(1, 8, 8, 3, rng));
    auto weights = std::make_shared<LossWeights>();
    p.leaves = {lf, lh, lq};
    p.forward = [=]() { return deep_supervision_loss(lf, lh, lq, *labels, *weights); };
    return p;
}

template <typename T>
FdProblem<T> unit_composite(Rng rng) {
    FdProblem<T> p;
    Tensor<T> x = Tensor<T>::randn({4, 6}, rng);
    Tensor<T> g = Tensor<T>::uniform({6}, rng, T(0.5), T(1.5));
    Tensor<T> b = Tensor<T>::randn({6}, rng, T(0.1));
    Tensor<T> wm = Tensor<T>::randn({6, 5}, rng, T(0.4));
    Tensor<T> w = Tensor<T>::uniform({4, 5}, rng, T(-1), T(1));
    p.leaves = {x, g, b, wm};
    p.forward = [=]() { return sum_all(mul(softmax_lastdim(matmul(layer_norm(x, g, b), wm)), w)); };
    return p;
}

template <typename T>
ModelConfig micro_model_config() {
    ModelConfig cfg;
    cfg.in_channels = 1;
    cfg.num_classes = 3;
    cfg.neighborhood = 1;
    cfg.encoder.in_channels = 1;
    cfg.encoder.stem_channels = 4;
    cfg.encoder.stage_channels = {4, 4, 8, 8};
    cfg.encoder.blocks_per_stage = {1, 1, 1, 1};
    cfg.encoder.stem_kernel = 3;
    cfg.window = 2;
    cfg.heads = {1, 1, 1, 1, 1};
    cfg.mlp_ratio = 2.0;
    cfg.decoder_channels = {8, 8, 8, 8};
    return cfg;
}

template <typename T>
FdProblem<T> unit_full_model(Rng rng, std::uint64_t seed) {
    FdProblem<T> p;
    auto model = std::make_shared<MosformerModel<T>>(micro_model_config<T>(), seed);
    // Fresh init leaves BN betas at 0, which parks some relu inputs exactly on
    // the kink where central differences and subgradients disagree; jitter
    // every parameter off those points.
    for (auto& t : model->trainable_params())
        for (auto& v : t.data()) v += static_cast<T>(rng.uniform(0.02, 0.11));
    auto target = std::make_shared<Tensor<T>>(Tensor<T>::randn({1, 1, 16, 16}, rng));
    auto nb0 = std::make_shared<Tensor<T>>(Tensor<T>::randn({1, 1, 16, 16}, rng));
    auto nb1 = std::make_shared<Tensor<T>>(Tensor<T>::randn({1, 1, 16, 16}, rng));
    auto labels = std::make_shared<LabelGrid>(random_labels(1, 16, 16, 3, rng));
    auto weights = std::make_shared<LossWeights>();
    p.leaves = model->trainable_params();
    p.leaves.push_back(*target);
    p.forward = [=]() {
        auto logits = model->forward(*target, {*nb0, *nb1}, /*training=*/true);
        return deep_supervision_loss(logits.full, logits.half, logits.quarter, *labels, *weights);
    };
    return p;
}

struct UnitSpec {
    std::string name;
    std::size_t coords;
};

template <typename T>
FdProblem<T> build_unit(const std::string& name, std::uint64_t seed) {
    Rng rng = Rng::seeded(seed ^ 0x5eed);
    if (name == "matmul") return unit_matmul<T>(rng);
    if (name == "softmax_lastdim") return unit_softmax<T>(rng);
    if (name == "layer_norm") return unit_layer_norm<T>(rng);
    if (name == "relu") return unit_activation<T>(rng, false);
    if (name == "gelu") return unit_activation<T>(rng, true);
    if (name == "conv2d") return unit_conv2d<T>(rng);
    if (name == "batch_norm2d") return unit_batch_norm<T>(rng);
    if (name == "upsample_bilinear2x") return unit_upsample<T>(rng);
    if (name == "csw_msa") return unit_csw_msa<T>(rng);
    if (name == "if_trans_block") return unit_if_trans<T>(rng);
    if (name == "ce_loss") return unit_ce<T>(rng);
    if (name == "dice_loss") return unit_dice<T>(rng);
    if (name == "deep_supervision_loss") return unit_deep_supervision<T>(rng);
    if (name == "composite_graph") return unit_composite<T>(rng);
    if (name == "full_model") return unit_full_model<T>(rng, seed);
    throw InputError("gradcheck: unknown unit " + name);
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckOptions& opt) {
    std::vector<UnitSpec> specs = {
        {"matmul", 32},        {"softmax_lastdim", 32}, {"layer_norm", 32},  {"relu", 32},
        {"gelu", 32},          {"conv2d", 24},          {"batch_norm2d", 24}, {"upsample_bilinear2x", 24},
        {"csw_msa", 12},       {"if_trans_block", 8},   {"ce_loss", 24},     {"dice_loss", 24},
        {"deep_supervision_loss", 16}, {"composite_graph", 24},
    };
    if (opt.include_model) specs.push_back({"full_model", 4});

    GradCheckReport report;
    for (const auto& spec : specs) {
        GradCheckUnit unit;
        unit.name = spec.name;
        const bool corrupt = opt.corrupt_unit == spec.name;
        {
            auto prob = build_unit<double>(spec.name, opt.seed);
            unit.rel_err_f64 = fd_rel_error(prob, 1e-5, spec.coords, corrupt);
        }
        {
            auto prob = build_unit<float>(spec.name, opt.seed);
            unit.rel_err_f32 = fd_rel_error(prob, 1e-2f, spec.coords, corrupt);
        }
        unit.pass = unit.rel_err_f64 < opt.tolerance;
        report.all_pass = report.all_pass && unit.pass;
        report.units.push_back(unit);
    }
    return report;
}

void print_gradcheck(const GradCheckReport& report, std::ostream& os) {
    os << "unit,rel_err_f64,rel_err_f32,status\n";
    for (const auto& u : report.units)
        os << u.name << ',' << u.rel_err_f64 << ',' << u.rel_err_f32 << ',' << (u.pass ? "pass" : "FAIL") << '\n';
    os << (report.all_pass ? "gradcheck: all units pass" : "gradcheck: FAILURES present") << '\n';
}

}  // namespace mosf
