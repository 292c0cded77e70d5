// mosf: train / evaluate / predict / gen-phantoms / gradcheck / ablate for
// the MOSformer 2.5D segmentation library.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mosformer/ablate.hpp"
#include "mosformer/checkpoint.hpp"
#include "mosformer/evaluate.hpp"
#include "mosformer/gradcheck.hpp"
#include "mosformer/phantom.hpp"
#include "mosformer/train.hpp"

namespace fs = std::filesystem;
using namespace mosf;

namespace {

struct CommonOpts {
    std::string config;
    std::string preset = "desk";
    std::int64_t seed = -1;
    std::string checkpoint;
    std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config, "config file (key = value lines)");
    cmd->add_option("--preset", o.preset, "base preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--seed", o.seed, "override runtime.seed");
    cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path");
    cmd->add_option("--out", o.out, "output directory (or file for predict)");
}

RunConfig make_config(const CommonOpts& o) {
    RunConfig cfg = RunConfig::preset(o.preset);
    if (!o.config.empty()) cfg.apply_file(o.config);
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    if (!o.out.empty()) cfg.out_dir = o.out;
    cfg.validate();
    if (cfg.threads > 0) set_max_threads(cfg.threads);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MOSformer 2.5D segmentation toolkit"};
    app.require_subcommand(1);

    CommonOpts train_o, eval_o, predict_o, phantom_o, grad_o, ablate_o;

    auto* cmd_train = app.add_subcommand("train", "train a model on a dataset manifest");
    add_common(cmd_train, train_o);
    std::string train_manifest;
    cmd_train->add_option("--manifest", train_manifest, "dataset manifest (overrides data.manifest)");

    auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint (DSC / HD95 per class)");
    add_common(cmd_eval, eval_o);
    std::string eval_manifest, eval_split = "test";
    cmd_eval->add_option("--manifest", eval_manifest, "dataset manifest");
    cmd_eval->add_option("--split", eval_split, "manifest split to score");

    auto* cmd_predict = app.add_subcommand("predict", "segment one volume into a label volume");
    add_common(cmd_predict, predict_o);
    std::string predict_volume_path;
    cmd_predict->add_option("--volume", predict_volume_path, "input MVOL image")->required();

    auto* cmd_phantom = app.add_subcommand("gen-phantoms", "generate a synthetic phantom dataset");
    add_common(cmd_phantom, phantom_o);
    std::string phantom_spec;
    cmd_phantom->add_option("--spec", phantom_spec, "phantom spec file (defaults to the desk population)");

    auto* cmd_grad = app.add_subcommand("gradcheck", "finite-difference checks of every differentiable unit");
    add_common(cmd_grad, grad_o);
    std::string corrupt_unit;
    cmd_grad->add_option("--corrupt", corrupt_unit, "fault-injection fixture: corrupt this unit's gradient")
        ->group("");  // hidden
    bool grad_fast = false;
    cmd_grad->add_flag("--skip-model", grad_fast, "skip the full-model unit");

    auto* cmd_ablate = app.add_subcommand("ablate", "train/evaluate a variant grid along one axis");
    add_common(cmd_ablate, ablate_o);
    std::string ablate_axis;
    std::vector<std::uint64_t> ablate_seeds;
    cmd_ablate->add_option("--axis", ablate_axis, "s | m | scales | encoder_mode")->required();
    cmd_ablate->add_option("--seeds", ablate_seeds, "seed list (default: runtime seed)")->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_train->parsed()) {
            RunConfig cfg = make_config(train_o);
            if (!train_manifest.empty()) cfg.manifest = train_manifest;
            TrainResult r = train_dispatch(cfg);
            std::cout << "checkpoint: " << r.checkpoint_path << "\n";
            std::cout << "log: " << r.log_path << "\n";
            std::cout << "final epoch mean loss: " << r.epoch_mean_loss.back() << "\n";
        } else if (cmd_eval->parsed()) {
            RunConfig cfg = make_config(eval_o);
            if (!eval_manifest.empty()) cfg.manifest = eval_manifest;
            if (eval_o.checkpoint.empty()) throw InputError("eval: --checkpoint is required");
            if (cfg.manifest.empty()) throw InputError("eval: --manifest or data.manifest is required");
            EvalResult r = evaluate_dispatch(cfg, eval_o.checkpoint, cfg.manifest, eval_split);
            fs::create_directories(cfg.out_dir);
            const std::string csv = (fs::path(cfg.out_dir) / "metrics.csv").string();
            std::ofstream os(csv);
            r.report.write_csv(os);
            r.report.write_csv(std::cout);
            std::cout << "metrics written to " << csv << "\n";
        } else if (cmd_predict->parsed()) {
            RunConfig cfg = make_config(predict_o);
            if (predict_o.checkpoint.empty()) throw InputError("predict: --checkpoint is required");
            const Volume vol = load_volume(predict_volume_path);
            std::string out_path = predict_o.out.empty() ? "prediction.mvol" : predict_o.out;
            LabelVolume pred;
            if (cfg.dtype == "f64") {
                MosformerModel<double> model(cfg.model, cfg.seed);
                load_checkpoint(predict_o.checkpoint, model.params());
                pred = model.predict_volume(vol);
            } else {
                MosformerModel<float> model(cfg.model, cfg.seed);
                load_checkpoint(predict_o.checkpoint, model.params());
                pred = model.predict_volume(vol);
            }
            save_labels(out_path, pred);
            std::cout << "labels written to " << out_path << "\n";
        } else if (cmd_phantom->parsed()) {
            PhantomSpec spec = phantom_spec.empty() ? PhantomSpec::desk_default() : PhantomSpec::from_file(phantom_spec);
            if (phantom_o.seed >= 0) spec.seed = static_cast<std::uint64_t>(phantom_o.seed);
            const std::string out_dir = phantom_o.out.empty() ? "phantoms" : phantom_o.out;
            std::vector<std::string> warnings;
            const auto entries = generate_phantom_dataset(spec, out_dir, &warnings);
            for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
            std::cout << "wrote " << entries.size() << " cases to " << out_dir << " (manifest.csv)\n";
        } else if (cmd_grad->parsed()) {
            GradCheckOptions opt;
            if (grad_o.seed >= 0) opt.seed = static_cast<std::uint64_t>(grad_o.seed);
            opt.corrupt_unit = corrupt_unit;
            opt.include_model = !grad_fast;
            GradCheckReport report = run_gradcheck(opt);
            print_gradcheck(report, std::cout);
            return report.all_pass ? 0 : 1;
        } else if (cmd_ablate->parsed()) {
            RunConfig cfg = make_config(ablate_o);
            if (cfg.manifest.empty()) throw InputError("ablate: data.manifest is required");
            if (ablate_seeds.empty()) ablate_seeds.push_back(cfg.seed);
            const auto rows = run_ablation(cfg, ablate_axis, ablate_seeds, &std::cerr);
            fs::create_directories(cfg.out_dir);
            const std::string csv = (fs::path(cfg.out_dir) / ("ablate_" + ablate_axis + ".csv")).string();
            std::ofstream os(csv);
            write_ablation_csv(rows, os);
            write_ablation_csv(rows, std::cout);
            std::cout << "comparison written to " << csv << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
