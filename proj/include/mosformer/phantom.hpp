#pragma once

#include <string>
#include <vector>

#include "mosformer/config.hpp"
#include "mosformer/volume_io.hpp"

namespace mosf {

struct GeneratedPhantom {
    Volume image;
    LabelVolume labels;
    std::vector<std::string> warnings;  // overlap notes
};

// One volume, deterministic given the rng state. Shapes are placed in spec
// order; overlaps are resolved by that order (later spec wins) after a few
// placement retries, with a warning when an overlap remains.
GeneratedPhantom generate_phantom(const PhantomSpec& spec, Rng& rng);

// Writes <case>_img.mvol / <case>_lbl.mvol plus manifest.csv into out_dir;
// returns the manifest entries (paths relative to out_dir).
std::vector<ManifestEntry> generate_phantom_dataset(const PhantomSpec& spec, const std::string& out_dir,
                                                    std::vector<std::string>* warnings = nullptr);

}  // namespace mosf
