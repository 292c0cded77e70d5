#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mosformer/common.hpp"

namespace mosf {

// Voxel layout is slice-major: index = ((z*C + c)*H + y)*W + x for images and
// (z*H + y)*W + x for label volumes.

struct Volume {
    std::size_t c = 1, h = 0, w = 0, d = 0;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<float> voxels;

    std::size_t slice_elems() const { return c * h * w; }
    const float* slice(std::size_t z) const { return voxels.data() + z * slice_elems(); }
    float* slice(std::size_t z) { return voxels.data() + z * slice_elems(); }
};

struct LabelVolume {
    std::size_t h = 0, w = 0, d = 0;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::uint32_t num_classes = 0;
    std::vector<std::uint8_t> v;

    std::uint8_t at(std::size_t y, std::size_t x, std::size_t z) const { return v[(z * h + y) * w + x]; }
    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t z) { return v[(z * h + y) * w + x]; }
};

// MVOL container: magic "MVOL", version u32, dtype tag u8 (0=f32, 1=f64,
// 2=u8), C,H,W,D u64, spacing 3 x f64, classes u32 (0 for images), raw
// little-endian payload. Round trips are byte-exact.
inline constexpr std::uint32_t kVolumeFormatVersion = 1;

void save_volume(const std::string& path, const Volume& vol);
Volume load_volume(const std::string& path);

void save_labels(const std::string& path, const LabelVolume& labels);
LabelVolume load_labels(const std::string& path);

// Dataset manifest: CSV with header case_id,image,label,split.
struct ManifestEntry {
    std::string case_id;
    std::string image_path;
    std::string label_path;
    std::string split;  // "train" or "test"
};

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::string& path);

}  // namespace mosf
