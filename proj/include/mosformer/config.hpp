#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mosformer/losses.hpp"
#include "mosformer/model.hpp"
#include "mosformer/optim.hpp"

namespace mosf {

// UTF-8 "key = value" text with dotted sections; '#' starts a comment.
class Config {
public:
    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_str(const std::string& key, const std::string& fallback);
    double get_double(const std::string& key, double fallback);
    std::int64_t get_int(const std::string& key, std::int64_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback);
    std::vector<std::string> get_str_list(const std::string& key, const std::vector<std::string>& fallback);

    // Keys starting with `prefix`, in file order.
    std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

    // Keys never read by any getter; used to reject typos on load.
    std::vector<std::string> unconsumed() const;

private:
    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> consumed_;
};

struct RunConfig {
    ModelConfig model;
    LossWeights loss;
    LrSchedule schedule;           // lr_max, lr_min, warmup, total epochs
    double sgd_momentum = 0.9;
    double weight_decay = 1e-4;
    int batch = 24;
    int iters_per_epoch = 0;       // 0: ceil(total training slices / batch)
    int checkpoint_every = 1;      // epochs
    std::uint64_t seed = 1;
    std::string dtype = "f32";     // f32 | f64
    int threads = 0;               // 0: MOSF_THREADS / hardware
    std::string manifest;          // dataset manifest CSV
    std::string out_dir = ".";
    bool resize224 = false;        // bilinear images / nearest labels, large preset only

    static RunConfig preset(const std::string& name);  // "desk" or "paper"
    void apply(Config& cfg);
    void apply_file(const std::string& path);
    void validate() const;
};

// Randomized ellipsoid population for one class.
struct ShapeSpec {
    int cls = 1;
    int count = 1;
    std::array<double, 2> rx{4, 8}, ry{4, 8}, rz{2, 4};  // radius ranges in voxels
    double intensity = 0.5;
};

struct PhantomSpec {
    std::size_t count_train = 20, count_test = 5;
    std::size_t height = 64, width = 64, depth = 24;
    std::array<double, 3> spacing{1.0, 1.0, 4.0};
    std::uint32_t classes = 4;
    double noise_sigma = 0.05;
    double background = 0.1;
    std::uint64_t seed = 7;
    std::vector<ShapeSpec> shapes;

    static PhantomSpec from_config(Config& cfg);
    static PhantomSpec from_file(const std::string& path);
    // The desk benchmark population (three organ classes over a 64x64x24
    // anisotropic grid, two of them sharing an intensity so through-plane
    // context matters).
    static PhantomSpec desk_default();
    void validate() const;
};

}  // namespace mosf
