#include "mosformer/ablate.hpp"

#include <algorithm>
#include <filesystem>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include "mosformer/evaluate.hpp"
#include "mosformer/train.hpp"

namespace mosf {

namespace {

struct Variant {
    std::string label;
    std::function<void(RunConfig&)> apply;
};

std::vector<Variant> variants_for(const std::string& axis) {
    std::vector<Variant> out;
    if (axis == "s") {
        for (std::size_t s : {0, 1, 2})
            out.push_back({"s=" + std::to_string(s), [s](RunConfig& c) { c.model.neighborhood = s; }});
    } else if (axis == "m") {
        for (int i = 0; i <= 9; ++i) {
            const double m = 0.1 * i;
            std::ostringstream label;
            label << "m=" << m;
            out.push_back({label.str(), [m](RunConfig& c) { c.model.momentum_m = m; }});
        }
    } else if (axis == "scales") {
        // '+' keeps the variant label CSV-safe.
        const std::vector<std::pair<std::string, std::array<bool, 4>>> sets = {
            {"/16", {false, false, false, true}},
            {"/8+/16", {false, false, true, true}},
            {"/4+/8+/16", {false, true, true, true}},
            {"/2+/4+/8+/16", {true, true, true, true}},
        };
        for (const auto& [label, fuse] : sets)
            out.push_back({label, [fuse](RunConfig& c) { c.model.fuse_scale = fuse; }});
    } else if (axis == "encoder_mode") {
        const std::vector<std::pair<std::string, EncoderMode>> modes = {
            {"single", EncoderMode::kSingle},
            {"dual_independent", EncoderMode::kDualIndependent},
            {"dual_momentum", EncoderMode::kDualMomentum},
        };
        for (const auto& [label, mode] : modes)
            out.push_back({label, [mode](RunConfig& c) { c.model.encoder_mode = mode; }});
    } else {
        throw InputError("ablate: unknown axis '" + axis + "' (expected s, m, scales, encoder_mode)");
    }
    return out;
}

std::string sanitize(std::string s) {
    for (char& c : s)
        if (c == '/' || c == ',' || c == '=' || c == '.') c = '_';
    return s;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<AblateRow> run_ablation(const RunConfig& base, const std::string& axis,
                                    const std::vector<std::uint64_t>& seeds, std::ostream* progress) {
    if (seeds.empty()) throw InputError("ablate: at least one seed required");
    const auto variants = variants_for(axis);
    std::vector<AblateRow> rows;
    for (const auto& variant : variants) {
        std::vector<double> dscs, hds;
        for (std::uint64_t seed : seeds) {
            RunConfig cfg = base;
            variant.apply(cfg);
            cfg.seed = seed;
            cfg.out_dir = (std::filesystem::path(base.out_dir) /
                           ("ablate_" + axis + "_" + sanitize(variant.label) + "_s" + std::to_string(seed)))
                              .string();
            cfg.validate();
            if (progress) (*progress) << "[ablate] " << axis << " " << variant.label << " seed " << seed << "...\n";
            TrainResult tr = train_dispatch(cfg);
            EvalResult ev = evaluate_dispatch(cfg, tr.checkpoint_path, cfg.manifest, "test");
            rows.push_back({axis, variant.label, std::to_string(seed), ev.mean_dsc_percent, ev.mean_hd95});
            dscs.push_back(ev.mean_dsc_percent);
            hds.push_back(ev.mean_hd95);
            if (progress)
                (*progress) << "[ablate] " << variant.label << " seed " << seed << ": DSC " << ev.mean_dsc_percent
                            << "% HD95 " << ev.mean_hd95 << "\n";
        }
        rows.push_back({axis, variant.label, "median", median(dscs), median(hds)});
    }
    return rows;
}

void write_ablation_csv(const std::vector<AblateRow>& rows, std::ostream& os) {
    os << "axis,variant,seed,mean_dsc_percent,mean_hd95\n";
    os.precision(10);
    for (const auto& r : rows)
        os << r.axis << ',' << r.variant << ',' << r.seed << ',' << r.mean_dsc_percent << ',' << r.mean_hd95 << '\n';
}

std::vector<AblateRow> read_ablation_csv(std::istream& is) {
    std::vector<AblateRow> rows;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            continue;
        }
        std::stringstream ss(line);
        AblateRow r;
        std::string dsc, hd;
        if (!std::getline(ss, r.axis, ',') || !std::getline(ss, r.variant, ',') || !std::getline(ss, r.seed, ',') ||
            !std::getline(ss, dsc, ',') || !std::getline(ss, hd, ','))
            throw IoError("malformed ablation row: " + line);
        r.mean_dsc_percent = std::stod(dsc);
        r.mean_hd95 = std::stod(hd);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace mosf
