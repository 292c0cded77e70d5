#include "mosformer/evaluate.hpp"

#include <filesystem>

#include "mosformer/checkpoint.hpp"
#include "mosformer/train.hpp"

namespace mosf {

EvalResult score_predictions(const std::vector<std::string>& case_ids, const std::vector<LabelVolume>& preds,
                             const std::vector<LabelVolume>& gts, std::uint32_t num_classes) {
    if (preds.size() != gts.size() || preds.size() != case_ids.size())
        throw InputError("score_predictions: case count mismatch");
    EvalResult out;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto rows = evaluate_case(case_ids[i], preds[i], gts[i], num_classes);
        out.report.rows.insert(out.report.rows.end(), rows.begin(), rows.end());
    }
    out.mean_dsc_percent = out.report.mean_dsc_percent();
    out.mean_hd95 = out.report.mean_hd95();
    return out;
}

template <typename T>
EvalResult evaluate_checkpoint(const RunConfig& cfg, const std::string& checkpoint_path,
                               const std::string& manifest_path, const std::string& split) {
    if (cfg.threads > 0) set_max_threads(cfg.threads);
    // Native-resolution ground truth; the model may consume a resized copy.
    const auto native = load_cases(manifest_path, split, /*resize224=*/false);

    MosformerModel<T> model(cfg.model, cfg.seed);
    load_checkpoint(checkpoint_path, model.params());

    std::vector<std::string> ids;
    std::vector<LabelVolume> preds, gts;
    for (const auto& c : native) {
        if (c.labels.num_classes != 0 && c.labels.num_classes != cfg.model.num_classes)
            throw ConfigError("eval: label classes (" + std::to_string(c.labels.num_classes) +
                              ") do not match model config (" + std::to_string(cfg.model.num_classes) + ")");
        LabelVolume pred;
        if (cfg.resize224) {
            const Volume resized = resize_volume_bilinear(c.image, 224, 224);
            LabelVolume pred224 = model.predict_volume(resized);
            pred = resize_labels_nearest(pred224, c.image.h, c.image.w);
            pred.spacing = c.labels.spacing;
        } else {
            pred = model.predict_volume(c.image);
            pred.spacing = c.labels.spacing;
        }
        ids.push_back(c.case_id);
        preds.push_back(std::move(pred));
        gts.push_back(c.labels);
    }
    return score_predictions(ids, preds, gts, static_cast<std::uint32_t>(cfg.model.num_classes));
}

EvalResult evaluate_dispatch(const RunConfig& cfg, const std::string& checkpoint_path,
                             const std::string& manifest_path, const std::string& split) {
    if (cfg.dtype == "f64") return evaluate_checkpoint<double>(cfg, checkpoint_path, manifest_path, split);
    return evaluate_checkpoint<float>(cfg, checkpoint_path, manifest_path, split);
}

template EvalResult evaluate_checkpoint<float>(const RunConfig&, const std::string&, const std::string&,
                                               const std::string&);
template EvalResult evaluate_checkpoint<double>(const RunConfig&, const std::string&, const std::string&,
                                                const std::string&);

}  // namespace mosf
