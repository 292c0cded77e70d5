#pragma once

#include <string>

#include "mosformer/config.hpp"
#include "mosformer/metrics.hpp"
#include "mosformer/model.hpp"

namespace mosf {

struct EvalResult {
    MetricReport report;
    double mean_dsc_percent = 0.0;
    double mean_hd95 = 0.0;
};

// Loads the checkpoint into a model built from cfg.model, predicts every
// volume of the split and scores it per organ class. Under resize224 the
// prediction is mapped back to the native grid before scoring.
template <typename T>
EvalResult evaluate_checkpoint(const RunConfig& cfg, const std::string& checkpoint_path,
                               const std::string& manifest_path, const std::string& split = "test");

EvalResult evaluate_dispatch(const RunConfig& cfg, const std::string& checkpoint_path,
                             const std::string& manifest_path, const std::string& split = "test");

// Scores a prediction volume against ground truth (shared by eval paths and
// tests that bypass model inference).
EvalResult score_predictions(const std::vector<std::string>& case_ids, const std::vector<LabelVolume>& preds,
                             const std::vector<LabelVolume>& gts, std::uint32_t num_classes);

}  // namespace mosf
