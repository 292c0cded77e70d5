#include "mosformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mosformer/checkpoint.hpp"
#include "mosformer/optim.hpp"

namespace mosf {

namespace fs = std::filesystem;

Volume resize_volume_bilinear(const Volume& vol, std::size_t out_h, std::size_t out_w) {
    Volume out;
    out.c = vol.c;
    out.h = out_h;
    out.w = out_w;
    out.d = vol.d;
    out.spacing = {vol.spacing[0] * static_cast<double>(vol.h) / static_cast<double>(out_h),
                   vol.spacing[1] * static_cast<double>(vol.w) / static_cast<double>(out_w), vol.spacing[2]};
    out.voxels.resize(out.c * out_h * out_w * out.d);
    const double sy = static_cast<double>(vol.h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(vol.w) / static_cast<double>(out_w);
    for (std::size_t z = 0; z < vol.d; ++z)
        for (std::size_t c = 0; c < vol.c; ++c) {
            const float* src = vol.voxels.data() + (z * vol.c + c) * vol.h * vol.w;
            float* dst = out.voxels.data() + (z * out.c + c) * out_h * out_w;
            for (std::size_t y = 0; y < out_h; ++y) {
                const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
                const double cy = std::clamp(fy, 0.0, static_cast<double>(vol.h - 1));
                const auto y0 = static_cast<std::size_t>(cy);
                const std::size_t y1 = std::min(y0 + 1, vol.h - 1);
                const double ty = cy - static_cast<double>(y0);
                for (std::size_t x = 0; x < out_w; ++x) {
                    const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
                    const double cx = std::clamp(fx, 0.0, static_cast<double>(vol.w - 1));
                    const auto x0 = static_cast<std::size_t>(cx);
                    const std::size_t x1 = std::min(x0 + 1, vol.w - 1);
                    const double tx = cx - static_cast<double>(x0);
                    const double a = src[y0 * vol.w + x0] * (1 - tx) + src[y0 * vol.w + x1] * tx;
                    const double b = src[y1 * vol.w + x0] * (1 - tx) + src[y1 * vol.w + x1] * tx;
                    dst[y * out_w + x] = static_cast<float>(a * (1 - ty) + b * ty);
                }
            }
        }
    return out;
}

LabelVolume resize_labels_nearest(const LabelVolume& labels, std::size_t out_h, std::size_t out_w) {
    LabelVolume out;
    out.h = out_h;
    out.w = out_w;
    out.d = labels.d;
    out.num_classes = labels.num_classes;
    out.spacing = {labels.spacing[0] * static_cast<double>(labels.h) / static_cast<double>(out_h),
                   labels.spacing[1] * static_cast<double>(labels.w) / static_cast<double>(out_w), labels.spacing[2]};
    out.v.resize(out_h * out_w * labels.d);
    for (std::size_t z = 0; z < labels.d; ++z)
        for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t x = 0; x < out_w; ++x) {
                const auto sy = std::min(labels.h - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) *
                                                                                static_cast<double>(labels.h) /
                                                                                static_cast<double>(out_h)));
                const auto sx = std::min(labels.w - 1, static_cast<std::size_t>((static_cast<double>(x) + 0.5) *
                                                                                static_cast<double>(labels.w) /
                                                                                static_cast<double>(out_w)));
                out.v[(z * out_h + y) * out_w + x] = labels.at(sy, sx, z);
            }
    return out;
}

std::vector<Case> load_cases(const std::string& manifest_path, const std::string& split, bool resize224) {
    const auto entries = load_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<Case> cases;
    for (const auto& e : entries) {
        if (!split.empty() && e.split != split) continue;
        Case c;
        c.case_id = e.case_id;
        c.image = load_volume((base / e.image_path).string());
        c.labels = load_labels((base / e.label_path).string());
        if (c.image.h != c.labels.h || c.image.w != c.labels.w || c.image.d != c.labels.d)
            throw DataError("case " + e.case_id + ": image and label grids differ");
        if (resize224) {
            c.image = resize_volume_bilinear(c.image, 224, 224);
            c.labels = resize_labels_nearest(c.labels, 224, 224);
        }
        cases.push_back(std::move(c));
    }
    if (cases.empty()) throw DataError("manifest has no cases for split '" + split + "': " + manifest_path);
    return cases;
}

namespace {

template <typename T>
Tensor<T> batch_from_slices(const std::vector<Case>& cases, const std::vector<std::pair<std::size_t, std::size_t>>& picks,
                            std::ptrdiff_t offset, const MosformerModel<T>& model) {
    const auto& first = cases[picks[0].first].image;
    const std::size_t ce = first.c, h = first.h, w = first.w;
    std::vector<T> data(picks.size() * ce * h * w);
    for (std::size_t bi = 0; bi < picks.size(); ++bi) {
        const auto& vol = cases[picks[bi].first].image;
        const std::size_t z = model.neighbor_index(picks[bi].second, offset, vol.d);
        const float* src = vol.slice(z);
        T* dst = data.data() + bi * ce * h * w;
        for (std::size_t i = 0; i < ce * h * w; ++i) dst[i] = static_cast<T>(src[i]);
    }
    return Tensor<T>::from_data({picks.size(), ce, h, w}, std::move(data));
}

LabelGrid labels_from_slices(const std::vector<Case>& cases,
                             const std::vector<std::pair<std::size_t, std::size_t>>& picks) {
    const auto& first = cases[picks[0].first].labels;
    LabelGrid grid;
    grid.b = picks.size();
    grid.h = first.h;
    grid.w = first.w;
    grid.v.resize(grid.pixels());
    for (std::size_t bi = 0; bi < picks.size(); ++bi) {
        const auto& lab = cases[picks[bi].first].labels;
        const std::size_t hw = lab.h * lab.w;
        for (std::size_t i = 0; i < hw; ++i)
            grid.v[bi * hw + i] = static_cast<std::int32_t>(lab.v[picks[bi].second * hw + i]);
    }
    return grid;
}

template <typename T>
void dump_diagnostics(const std::string& path, int epoch, int iter, double lr,
                      const std::vector<double>& recent_losses, const MosformerModel<T>& model) {
    std::ofstream os(path);
    os << "nan/inf loss diagnostic\n";
    os << "epoch=" << epoch << " iter=" << iter << " lr=" << lr << "\n";
    os << "recent losses:";
    for (double l : recent_losses) os << ' ' << l;
    os << "\nparameter max-abs by name:\n";
    for (const auto& e : model.params().entries()) {
        double mx = 0;
        for (auto v : e.tensor.data()) mx = std::max(mx, std::abs(static_cast<double>(v)));
        os << "  " << e.name << " " << mx << "\n";
    }
}

}  // namespace

template <typename T>
TrainResult train_run(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.threads > 0) set_max_threads(cfg.threads);
    if (cfg.manifest.empty()) throw ConfigError("train: data.manifest is required");
    const auto cases = load_cases(cfg.manifest, "train", cfg.resize224);

    fs::create_directories(cfg.out_dir);
    const std::string log_path = (fs::path(cfg.out_dir) / "log.csv").string();
    const std::string ckpt_path = (fs::path(cfg.out_dir) / "checkpoint.mosf").string();

    MosformerModel<T> model(cfg.model, cfg.seed);
    auto trainables = model.trainable_params();
    SgdState<T> opt;
    opt.momentum = static_cast<T>(cfg.sgd_momentum);
    opt.weight_decay = static_cast<T>(cfg.weight_decay);
    opt.attach(trainables);

    // All (volume, slice) pairs; batches sample uniformly from them.
    std::vector<std::pair<std::size_t, std::size_t>> pool;
    for (std::size_t ci = 0; ci < cases.size(); ++ci)
        for (std::size_t z = 0; z < cases[ci].image.d; ++z) pool.push_back({ci, z});
    const int iters = cfg.iters_per_epoch > 0
                          ? cfg.iters_per_epoch
                          : static_cast<int>((pool.size() + cfg.batch - 1) / static_cast<std::size_t>(cfg.batch));

    Rng data_rng = Rng::seeded(cfg.seed).fork(0xDA7A);
    const std::size_t s = cfg.model.neighborhood;

    std::ofstream log(log_path);
    if (!log) throw IoError("cannot open for writing: " + log_path);
    log << "epoch,iter,lr,loss,ce_full,dice_full,ce_half,dice_half,ce_quarter,dice_quarter\n";
    log << std::setprecision(17);

    TrainResult result;
    result.iterations_per_epoch = iters;
    std::vector<double> recent;

    for (int epoch = 0; epoch < cfg.schedule.total_epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg.schedule);
        opt.lr = static_cast<T>(lr);
        double epoch_loss = 0;
        for (int iter = 0; iter < iters; ++iter) {
            std::vector<std::pair<std::size_t, std::size_t>> picks(static_cast<std::size_t>(cfg.batch));
            for (auto& p : picks) p = pool[static_cast<std::size_t>(
                data_rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];

            Tensor<T> target = batch_from_slices(cases, picks, 0, model);
            std::vector<Tensor<T>> neighbors;
            neighbors.reserve(2 * s);
            for (std::ptrdiff_t off = -static_cast<std::ptrdiff_t>(s); off <= static_cast<std::ptrdiff_t>(s); ++off) {
                if (off == 0) continue;
                neighbors.push_back(batch_from_slices(cases, picks, off, model));
            }
            LabelGrid labels = labels_from_slices(cases, picks);

            LogitStack<T> logits = model.forward(target, neighbors, /*training=*/true);
            auto terms = deep_supervision_terms(logits.full, logits.half, logits.quarter, labels, cfg.loss);
            const double loss = static_cast<double>(terms.total.item());
            if (!std::isfinite(loss)) {
                const std::string dump = (fs::path(cfg.out_dir) / "nan_dump.txt").string();
                dump_diagnostics(dump, epoch, iter, lr, recent, model);
                throw DataError("training loss is not finite (diagnostics in " + dump + ")");
            }
            recent.push_back(loss);
            if (recent.size() > 16) recent.erase(recent.begin());
            epoch_loss += loss;

            for (auto& p : trainables) p.zero_grad();
            terms.total.backward();
            sgd_step(trainables, opt);
            if (cfg.model.encoder_mode == EncoderMode::kDualMomentum) momentum_update(model.dual_state());

            log << epoch << ',' << iter << ',' << lr << ',' << loss << ',' << terms.ce_full.item() << ','
                << terms.dice_full.item() << ',' << terms.ce_half.item() << ',' << terms.dice_half.item() << ','
                << terms.ce_quarter.item() << ',' << terms.dice_quarter.item() << '\n';
        }
        result.epoch_mean_loss.push_back(epoch_loss / iters);
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(ckpt_path, model.params());
    }
    save_checkpoint(ckpt_path, model.params());
    result.checkpoint_path = ckpt_path;
    result.log_path = log_path;
    return result;
}

TrainResult train_dispatch(const RunConfig& cfg) {
    if (cfg.dtype == "f64") return train_run<double>(cfg);
    return train_run<float>(cfg);
}

template TrainResult train_run<float>(const RunConfig&);
template TrainResult train_run<double>(const RunConfig&);

}  // namespace mosf
