#include "mosformer/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace mosf {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

}  // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return from_string(buf.str());
}

Config Config::from_string(const std::string& text) {
    Config cfg;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        cfg.kv_[key] = value;
    }
    return cfg;
}

void Config::set(const std::string& key, const std::string& value) { kv_[key] = value; }

bool Config::has(const std::string& key) const { return kv_.count(key) != 0; }

std::string Config::get_str(const std::string& key, const std::string& fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
}

double Config::get_double(const std::string& key, double fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    consumed_.insert(key);
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": not a number: " + it->second);
    }
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    consumed_.insert(key);
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": not an integer: " + it->second);
    }
}

bool Config::get_bool(const std::string& key, bool fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    consumed_.insert(key);
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key " + key + ": not a boolean: " + it->second);
}

std::vector<double> Config::get_list(const std::string& key, const std::vector<double>& fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    consumed_.insert(key);
    std::vector<double> out;
    for (const auto& tok : split(it->second, ',')) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("key " + key + ": not a number list: " + it->second);
        }
    }
    return out;
}

std::vector<std::string> Config::get_str_list(const std::string& key, const std::vector<std::string>& fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    consumed_.insert(key);
    return split(it->second, ',');
}

std::vector<std::string> Config::keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : kv_)
        if (k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
}

std::vector<std::string> Config::unconsumed() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : kv_)
        if (!consumed_.count(k)) out.push_back(k);
    return out;
}

// ----------------------------------------------------------------- RunConfig

RunConfig RunConfig::preset(const std::string& name) {
    RunConfig rc;
    if (name == "paper") {
        rc.model.num_classes = 9;
        rc.model.encoder.stem_channels = 64;
        rc.model.encoder.stem_kernel = 7;
        rc.model.encoder.stage_channels = {256, 512, 1024, 2048};
        rc.model.encoder.blocks_per_stage = {3, 4, 6, 3};
        rc.model.encoder.bottleneck = true;
        rc.model.window = 7;
        rc.model.decoder_channels = {512, 256, 128, 64};
        rc.resize224 = true;
    } else if (name == "desk") {
        rc.model.num_classes = 4;
        rc.model.encoder.stem_channels = 16;
        rc.model.encoder.stem_kernel = 3;
        rc.model.encoder.stage_channels = {16, 32, 64, 128};
        rc.model.encoder.blocks_per_stage = {1, 1, 1, 1};
        rc.model.encoder.bottleneck = false;
        rc.model.window = 4;
        rc.model.decoder_channels = {64, 32, 16, 16};
        rc.schedule.total_epochs = 40;
        rc.batch = 4;
        rc.resize224 = false;
    } else {
        throw ConfigError("unknown preset: " + name + " (expected desk or paper)");
    }
    return rc;
}

void RunConfig::apply(Config& cfg) {
    seed = static_cast<std::uint64_t>(cfg.get_int("runtime.seed", static_cast<std::int64_t>(seed)));
    dtype = cfg.get_str("runtime.dtype", dtype);
    threads = static_cast<int>(cfg.get_int("runtime.threads", threads));

    schedule.lr_max = cfg.get_double("optim.lr_max", schedule.lr_max);
    schedule.lr_min = cfg.get_double("optim.lr_min", schedule.lr_min);
    schedule.warmup_epochs = static_cast<int>(cfg.get_int("optim.warmup_epochs", schedule.warmup_epochs));
    schedule.total_epochs = static_cast<int>(cfg.get_int("optim.epochs", schedule.total_epochs));
    sgd_momentum = cfg.get_double("optim.momentum", sgd_momentum);
    weight_decay = cfg.get_double("optim.weight_decay", weight_decay);
    batch = static_cast<int>(cfg.get_int("optim.batch", batch));
    iters_per_epoch = static_cast<int>(cfg.get_int("optim.iters_per_epoch", iters_per_epoch));
    checkpoint_every = static_cast<int>(cfg.get_int("optim.checkpoint_every", checkpoint_every));

    model.in_channels = static_cast<std::size_t>(cfg.get_int("model.in_channels", model.in_channels));
    model.num_classes = static_cast<std::size_t>(cfg.get_int("model.classes", model.num_classes));
    model.neighborhood = static_cast<std::size_t>(cfg.get_int("model.s", model.neighborhood));
    model.momentum_m = cfg.get_double("model.m", model.momentum_m);
    model.blend_buffers = cfg.get_bool("model.blend_bn_buffers", model.blend_buffers);
    model.window = static_cast<std::size_t>(cfg.get_int("model.window", model.window));
    model.mlp_ratio = cfg.get_double("model.mlp_ratio", model.mlp_ratio);
    model.joint_neighbor_update = cfg.get_bool("model.joint_neighbor_update", model.joint_neighbor_update);
    model.fusion_bypass = cfg.get_bool("model.fusion_bypass", model.fusion_bypass);

    const std::string mode = cfg.get_str("model.encoder_mode", "");
    if (!mode.empty()) {
        if (mode == "single") model.encoder_mode = EncoderMode::kSingle;
        else if (mode == "dual_independent") model.encoder_mode = EncoderMode::kDualIndependent;
        else if (mode == "dual_momentum") model.encoder_mode = EncoderMode::kDualMomentum;
        else throw ConfigError("model.encoder_mode: expected single|dual_independent|dual_momentum");
    }
    const std::string boundary = cfg.get_str("model.boundary", "");
    if (!boundary.empty()) {
        if (boundary == "clamp") model.boundary = BoundaryMode::kClamp;
        else if (boundary == "mirror") model.boundary = BoundaryMode::kMirror;
        else throw ConfigError("model.boundary: expected clamp|mirror");
    }
    {
        std::vector<std::string> cur;
        const char* names[4] = {"/2", "/4", "/8", "/16"};
        for (int i = 0; i < 4; ++i)
            if (model.fuse_scale[i]) cur.push_back(names[i]);
        auto scales = cfg.get_str_list("model.fuse_scales", cur);
        std::array<bool, 4> fuse{false, false, false, false};
        for (const auto& s : scales) {
            if (s == "/2") fuse[0] = true;
            else if (s == "/4") fuse[1] = true;
            else if (s == "/8") fuse[2] = true;
            else if (s == "/16") fuse[3] = true;
            else throw ConfigError("model.fuse_scales: unknown scale " + s);
        }
        model.fuse_scale = fuse;
    }
    {
        std::vector<double> cur(model.heads.begin(), model.heads.end());
        auto hv = cfg.get_list("model.heads", cur);
        if (hv.size() != 5) throw ConfigError("model.heads: expected 5 values (four scales plus bottom)");
        for (int i = 0; i < 5; ++i) model.heads[i] = static_cast<std::size_t>(hv[i]);
    }
    {
        std::vector<double> cur(model.decoder_channels.begin(), model.decoder_channels.end());
        auto dv = cfg.get_list("model.decoder_channels", cur);
        if (dv.size() != 4) throw ConfigError("model.decoder_channels: expected 4 values");
        for (int i = 0; i < 4; ++i) model.decoder_channels[i] = static_cast<std::size_t>(dv[i]);
    }

    model.encoder.in_channels = model.in_channels;
    model.encoder.stem_channels = static_cast<std::size_t>(cfg.get_int("encoder.stem_channels", model.encoder.stem_channels));
    model.encoder.stem_kernel = static_cast<std::size_t>(cfg.get_int("encoder.stem_kernel", model.encoder.stem_kernel));
    model.encoder.bottleneck = cfg.get_bool("encoder.bottleneck", model.encoder.bottleneck);
    {
        std::vector<double> cur(model.encoder.stage_channels.begin(), model.encoder.stage_channels.end());
        auto sv = cfg.get_list("encoder.stage_channels", cur);
        if (sv.size() != 4) throw ConfigError("encoder.stage_channels: expected 4 values");
        for (int i = 0; i < 4; ++i) model.encoder.stage_channels[i] = static_cast<std::size_t>(sv[i]);
    }
    {
        std::vector<double> cur(model.encoder.blocks_per_stage.begin(), model.encoder.blocks_per_stage.end());
        auto bv = cfg.get_list("encoder.blocks", cur);
        if (bv.size() != 4) throw ConfigError("encoder.blocks: expected 4 values");
        for (int i = 0; i < 4; ++i) model.encoder.blocks_per_stage[i] = static_cast<std::size_t>(bv[i]);
    }

    {
        auto lv = cfg.get_list("loss.lambda", {loss.lambda1, loss.lambda2, loss.lambda3});
        if (lv.size() != 3) throw ConfigError("loss.lambda: expected 3 values");
        loss.lambda1 = lv[0];
        loss.lambda2 = lv[1];
        loss.lambda3 = lv[2];
        auto av = cfg.get_list("loss.alpha", {loss.alpha1, loss.alpha2});
        if (av.size() != 2) throw ConfigError("loss.alpha: expected 2 values");
        loss.alpha1 = av[0];
        loss.alpha2 = av[1];
    }

    manifest = cfg.get_str("data.manifest", manifest);
    out_dir = cfg.get_str("data.out_dir", out_dir);
    resize224 = cfg.get_bool("data.resize224", resize224);

    const auto leftovers = cfg.unconsumed();
    if (!leftovers.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : leftovers) msg += " " + k;
        throw ConfigError(msg);
    }
    validate();
}

void RunConfig::apply_file(const std::string& path) {
    Config cfg = Config::from_file(path);
    apply(cfg);
}

void RunConfig::validate() const {
    model.validate();
    if (schedule.lr_max <= 0 || schedule.lr_min <= 0 || schedule.lr_min > schedule.lr_max)
        throw ConfigError("optim: learning-rate bounds must satisfy 0 < lr_min <= lr_max");
    if (schedule.warmup_epochs < 0 || schedule.total_epochs < 1 || schedule.warmup_epochs >= schedule.total_epochs)
        throw ConfigError("optim: warmup must lie inside the epoch budget");
    if (sgd_momentum < 0 || sgd_momentum >= 1) throw ConfigError("optim.momentum must lie in [0,1)");
    if (weight_decay < 0) throw ConfigError("optim.weight_decay must be nonnegative");
    if (batch < 1) throw ConfigError("optim.batch must be >= 1");
    if (iters_per_epoch < 0) throw ConfigError("optim.iters_per_epoch must be >= 0");
    if (dtype != "f32" && dtype != "f64") throw ConfigError("runtime.dtype must be f32 or f64");
    if (threads < 0) throw ConfigError("runtime.threads must be >= 0");
}

// --------------------------------------------------------------- PhantomSpec

namespace {

std::array<double, 2> parse_range(const std::string& tok, const std::string& where) {
    const auto dots = tok.find("..");
    try {
        if (dots == std::string::npos) {
            const double v = std::stod(tok);
            return {v, v};
        }
        const double lo = std::stod(tok.substr(0, dots));
        const double hi = std::stod(tok.substr(dots + 2));
        if (hi < lo) throw std::invalid_argument("inverted");
        return {lo, hi};
    } catch (const std::exception&) {
        throw ConfigError(where + ": bad range " + tok);
    }
}

ShapeSpec parse_shape(const std::string& value, const std::string& where) {
    ShapeSpec spec;
    std::stringstream ss(value);
    std::string tok;
    while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key=value tokens");
        const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
        if (k == "class") spec.cls = std::stoi(v);
        else if (k == "count") spec.count = std::stoi(v);
        else if (k == "rx") spec.rx = parse_range(v, where);
        else if (k == "ry") spec.ry = parse_range(v, where);
        else if (k == "rz") spec.rz = parse_range(v, where);
        else if (k == "intensity") spec.intensity = std::stod(v);
        else throw ConfigError(where + ": unknown token " + k);
    }
    return spec;
}

}  // namespace

PhantomSpec PhantomSpec::desk_default() {
    PhantomSpec spec;
    spec.count_train = 20;
    spec.count_test = 5;
    spec.height = 64;
    spec.width = 64;
    spec.depth = 24;
    spec.spacing = {1.0, 1.0, 4.0};
    spec.classes = 4;
    spec.noise_sigma = 0.08;
    spec.background = 0.1;
    spec.seed = 7;
    // Classes 1 and 2 share an intensity and differ only in through-plane
    // extent; class 3 is intensity-coded.
    ShapeSpec thick;
    thick.cls = 1;
    thick.count = 1;
    thick.rx = {7, 12};
    thick.ry = {7, 12};
    thick.rz = {7, 10};
    thick.intensity = 0.7;
    ShapeSpec thin = thick;
    thin.cls = 2;
    thin.rz = {1.2, 2.2};
    ShapeSpec bright = thick;
    bright.cls = 3;
    bright.rz = {3, 6};
    bright.intensity = 0.4;
    spec.shapes = {thick, thin, bright};
    return spec;
}

PhantomSpec PhantomSpec::from_config(Config& cfg) {
    PhantomSpec spec = desk_default();
    spec.count_train = static_cast<std::size_t>(cfg.get_int("phantom.count_train", spec.count_train));
    spec.count_test = static_cast<std::size_t>(cfg.get_int("phantom.count_test", spec.count_test));
    spec.height = static_cast<std::size_t>(cfg.get_int("phantom.height", spec.height));
    spec.width = static_cast<std::size_t>(cfg.get_int("phantom.width", spec.width));
    spec.depth = static_cast<std::size_t>(cfg.get_int("phantom.depth", spec.depth));
    spec.classes = static_cast<std::uint32_t>(cfg.get_int("phantom.classes", spec.classes));
    spec.noise_sigma = cfg.get_double("phantom.noise_sigma", spec.noise_sigma);
    spec.background = cfg.get_double("phantom.background", spec.background);
    spec.seed = static_cast<std::uint64_t>(cfg.get_int("phantom.seed", static_cast<std::int64_t>(spec.seed)));
    {
        auto sv = cfg.get_list("phantom.spacing", {spec.spacing[0], spec.spacing[1], spec.spacing[2]});
        if (sv.size() != 3) throw ConfigError("phantom.spacing: expected 3 values");
        spec.spacing = {sv[0], sv[1], sv[2]};
    }
    const auto shape_keys = cfg.keys_with_prefix("phantom.shape.");
    if (!shape_keys.empty()) {
        spec.shapes.clear();
        for (const auto& k : shape_keys) spec.shapes.push_back(parse_shape(cfg.get_str(k, ""), k));
    }
    const auto leftovers = cfg.unconsumed();
    if (!leftovers.empty()) {
        std::string msg = "unknown phantom spec keys:";
        for (const auto& k : leftovers) msg += " " + k;
        throw ConfigError(msg);
    }
    spec.validate();
    return spec;
}

PhantomSpec PhantomSpec::from_file(const std::string& path) {
    Config cfg = Config::from_file(path);
    return from_config(cfg);
}

void PhantomSpec::validate() const {
    if (height == 0 || width == 0 || depth == 0) throw ConfigError("phantom: extents must be positive");
    if (classes < 2) throw ConfigError("phantom: at least two classes (background + one)");
    if (noise_sigma < 0) throw ConfigError("phantom: noise sigma must be nonnegative");
    if (count_train + count_test == 0) throw ConfigError("phantom: nothing to generate");
    for (const auto& s : shapes) {
        if (s.cls < 1 || static_cast<std::uint32_t>(s.cls) >= classes)
            throw ConfigError("phantom shape: class outside [1, classes)");
        if (s.count < 1) throw ConfigError("phantom shape: count must be >= 1");
        if (s.rx[0] <= 0 || s.ry[0] <= 0 || s.rz[0] <= 0) throw ConfigError("phantom shape: radii must be positive");
    }
}

}  // namespace mosf
