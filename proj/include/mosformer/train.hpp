#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mosformer/config.hpp"
#include "mosformer/model.hpp"
#include "mosformer/volume_io.hpp"

namespace mosf {

// In-memory training pair.
struct Case {
    std::string case_id;
    Volume image;
    LabelVolume labels;
};

// Loads the manifest's cases of one split, resolving relative paths against
// the manifest's directory. Applies the 224x224 resize when requested.
std::vector<Case> load_cases(const std::string& manifest_path, const std::string& split, bool resize224);

// Preprocessing used under the large preset: bilinear for images, nearest for
// labels.
Volume resize_volume_bilinear(const Volume& vol, std::size_t out_h, std::size_t out_w);
LabelVolume resize_labels_nearest(const LabelVolume& labels, std::size_t out_h, std::size_t out_w);

struct TrainResult {
    std::string checkpoint_path;
    std::string log_path;
    std::vector<double> epoch_mean_loss;
    int iterations_per_epoch = 0;
};

// Full training run: per iteration sample a batch of (volume, slice) pairs,
// forward, deep-supervision loss, backward, SGD step, then the momentum
// update. Writes log.csv and checkpoint.mosf under cfg.out_dir. Bitwise
// reproducible from (seed, config) in f64 mode.
template <typename T>
TrainResult train_run(const RunConfig& cfg);

// Dtype dispatch helper for callers holding a RunConfig.
TrainResult train_dispatch(const RunConfig& cfg);

}  // namespace mosf
