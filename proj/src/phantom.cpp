#include "mosformer/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace mosf {

namespace {

struct Ellipsoid {
    double cy, cx, cz, ry, rx, rz;

    bool contains(std::size_t y, std::size_t x, std::size_t z) const {
        const double dy = (static_cast<double>(y) - cy) / ry;
        const double dx = (static_cast<double>(x) - cx) / rx;
        const double dz = (static_cast<double>(z) - cz) / rz;
        return dy * dy + dx * dx + dz * dz <= 1.0;
    }

    // Clipped bounding box [lo, hi) per axis.
    std::array<std::size_t, 6> bbox(std::size_t h, std::size_t w, std::size_t d) const {
        auto lo = [](double c, double r) { return static_cast<std::size_t>(std::max(0.0, std::floor(c - r))); };
        auto hi = [](double c, double r, std::size_t e) {
            return std::min(e, static_cast<std::size_t>(std::max(0.0, std::ceil(c + r) + 1)));
        };
        return {lo(cy, ry), hi(cy, ry, h), lo(cx, rx), hi(cx, rx, w), lo(cz, rz), hi(cz, rz, d)};
    }
};

Ellipsoid sample_ellipsoid(const ShapeSpec& s, const PhantomSpec& spec, Rng& rng) {
    Ellipsoid e;
    e.ry = rng.uniform(s.ry[0], s.ry[1]);
    e.rx = rng.uniform(s.rx[0], s.rx[1]);
    e.rz = rng.uniform(s.rz[0], s.rz[1]);
    auto center = [&](double r, std::size_t extent) {
        const double lo = std::min(r, static_cast<double>(extent - 1) / 2.0);
        const double hi = std::max(static_cast<double>(extent - 1) - r, lo);
        return rng.uniform(lo, hi);
    };
    e.cy = center(e.ry, spec.height);
    e.cx = center(e.rx, spec.width);
    e.cz = center(e.rz, spec.depth);
    return e;
}

}  // namespace

GeneratedPhantom generate_phantom(const PhantomSpec& spec, Rng& rng) {
    GeneratedPhantom out;
    out.labels.h = spec.height;
    out.labels.w = spec.width;
    out.labels.d = spec.depth;
    out.labels.spacing = spec.spacing;
    out.labels.num_classes = spec.classes;
    out.labels.v.assign(spec.height * spec.width * spec.depth, 0);

    std::vector<double> class_intensity(spec.classes, spec.background);
    for (const auto& s : spec.shapes) class_intensity[static_cast<std::size_t>(s.cls)] = s.intensity;

    constexpr int kPlacementRetries = 24;
    for (const auto& s : spec.shapes) {
        for (int inst = 0; inst < s.count; ++inst) {
            Ellipsoid e = sample_ellipsoid(s, spec, rng);
            bool overlaps = true;
            for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
                overlaps = false;
                const auto bb = e.bbox(spec.height, spec.width, spec.depth);
                for (std::size_t z = bb[4]; z < bb[5] && !overlaps; ++z)
                    for (std::size_t y = bb[0]; y < bb[1] && !overlaps; ++y)
                        for (std::size_t x = bb[2]; x < bb[3] && !overlaps; ++x)
                            if (out.labels.at(y, x, z) != 0 && e.contains(y, x, z)) overlaps = true;
                if (!overlaps) break;
                e = sample_ellipsoid(s, spec, rng);
            }
            std::size_t overwritten = 0;
            const auto bb = e.bbox(spec.height, spec.width, spec.depth);
            for (std::size_t z = bb[4]; z < bb[5]; ++z)
                for (std::size_t y = bb[0]; y < bb[1]; ++y)
                    for (std::size_t x = bb[2]; x < bb[3]; ++x)
                        if (e.contains(y, x, z)) {
                            if (out.labels.at(y, x, z) != 0) ++overwritten;
                            out.labels.at(y, x, z) = static_cast<std::uint8_t>(s.cls);
                        }
            if (overwritten > 0)
                out.warnings.push_back("class " + std::to_string(s.cls) + " overwrote " +
                                       std::to_string(overwritten) + " voxels (z-order)");
        }
    }

    out.image.c = 1;
    out.image.h = spec.height;
    out.image.w = spec.width;
    out.image.d = spec.depth;
    out.image.spacing = spec.spacing;
    out.image.voxels.resize(spec.height * spec.width * spec.depth);
    for (std::size_t z = 0; z < spec.depth; ++z)
        for (std::size_t y = 0; y < spec.height; ++y)
            for (std::size_t x = 0; x < spec.width; ++x) {
                double v = class_intensity[out.labels.at(y, x, z)];
                if (spec.noise_sigma > 0) v += rng.normal(0.0, spec.noise_sigma);
                out.image.voxels[(z * spec.height + y) * spec.width + x] = static_cast<float>(v);
            }
    return out;
}

std::vector<ManifestEntry> generate_phantom_dataset(const PhantomSpec& spec, const std::string& out_dir,
                                                    std::vector<std::string>* warnings) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    Rng rng = Rng::seeded(spec.seed);
    std::vector<ManifestEntry> entries;
    auto emit = [&](const std::string& split, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%s_%03zu", split.c_str(), i);
            const std::string case_id(buf);
            GeneratedPhantom ph = generate_phantom(spec, rng);
            if (warnings)
                for (auto& w : ph.warnings) warnings->push_back(case_id + ": " + w);
            ManifestEntry e;
            e.case_id = case_id;
            e.image_path = case_id + "_img.mvol";
            e.label_path = case_id + "_lbl.mvol";
            e.split = split;
            save_volume((fs::path(out_dir) / e.image_path).string(), ph.image);
            save_labels((fs::path(out_dir) / e.label_path).string(), ph.labels);
            entries.push_back(std::move(e));
        }
    };
    emit("train", spec.count_train);
    emit("test", spec.count_test);
    save_manifest((fs::path(out_dir) / "manifest.csv").string(), entries);
    return entries;
}

}  // namespace mosf
