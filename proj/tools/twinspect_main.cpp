// twinspect_main.cpp — CLI front end: dataset generation, viewpoint
// planning, pose estimation, calibration training, evaluation, the ablation
// battery, and report rendering.
#include <CLI11.hpp>

#include <iostream>

#include "twinspect/harness.hpp"

namespace hn = twinspect::harness;

int main(int argc, char** argv) {
    CLI::App app{"twinspect — real-to-twin zero-shot anomaly detection at desk scale"};
    app.require_subcommand(1);

    std::string config_path, out_dir, dataset_dir, model_path, image_path, mesh_spec, methods_csv,
        variant_name, run_dir, out_path;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed_flag;
    uint64_t seed_value = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file (defaults when omitted)");
        cmd->add_option("--set", overrides, "dotted-path override, e.g. dataset.seed=7")
            ->take_all();
        cmd->add_option_function<uint64_t>(
            "--seed", [&](uint64_t v) { seed_flag = v; }, "override dataset and train seeds");
    };

    auto* gen = app.add_subcommand("gen", "generate the synthetic paired dataset");
    add_common(gen);
    gen->add_option("--out", out_dir, "dataset output directory")->required();

    auto* plan = app.add_subcommand("plan", "emit the viewpoint plan as JSON");
    add_common(plan);
    plan->add_option("--out", out_path, "plan JSON path")->required();

    auto* pose = app.add_subcommand("pose", "two-stage pose estimation for one image");
    add_common(pose);
    int template_count = 64;
    pose->add_option("--image", image_path, "observed grayscale PGM")->required();
    pose->add_option("--mesh", mesh_spec, "mesh spec (builtin:<name> or OFF path)")->required();
    pose->add_option("--templates", template_count, "coarse template count");
    pose->add_option("--out", out_path, "write the PoseEstimate JSON here (stdout otherwise)");

    auto* train = app.add_subcommand("train", "train the calibration model on the train split");
    add_common(train);
    train->add_option("--dataset", dataset_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "run output directory")->required();
    train->add_option("--variant", variant_name, "full|no_p_real|no_p_render|no_local");

    auto* eval = app.add_subcommand("eval", "score the test split and compute metrics");
    add_common(eval);
    eval->add_option("--dataset", dataset_dir, "dataset directory")->required();
    eval->add_option("--model", model_path, "calibration checkpoint (.calm)");
    eval->add_option("--out", out_dir, "run output directory")->required();
    eval->add_option("--methods", methods_csv, "comma list: avatar,rgb,grad,ssim");

    auto* ablate = app.add_subcommand("ablate", "run the four-variant ablation battery");
    add_common(ablate);
    ablate->add_option("--dataset", dataset_dir, "dataset directory")->required();
    ablate->add_option("--out", out_dir, "ablation output directory")->required();

    auto* report = app.add_subcommand("report", "render tables for an eval run");
    report->add_option("--run", run_dir, "eval run directory")->required();
    report->add_option("--out", out_path, "report path (default <run>/report.txt)");

    CLI11_PARSE(app, argc, argv);
    (void)seed_value;

    try {
        hn::RunConfig cfg;
        if (!app.got_subcommand(report)) cfg = hn::load_config(config_path, overrides, seed_flag);
        if (!methods_csv.empty()) {
            cfg.methods.clear();
            std::string tok;
            for (char c : methods_csv + ",") {
                if (c == ',') {
                    if (!tok.empty()) cfg.methods.push_back(tok);
                    tok.clear();
                } else {
                    tok.push_back(c);
                }
            }
        }

        if (app.got_subcommand(gen)) {
            const auto manifest = hn::run_gen(cfg, out_dir);
            std::cout << "generated " << manifest.pairs.size() << " pairs under " << out_dir
                      << "\n";
        } else if (app.got_subcommand(plan)) {
            hn::run_plan(cfg, out_path);
            std::cout << "plan written to " << out_path << "\n";
        } else if (app.got_subcommand(pose)) {
            const auto est = hn::run_pose(cfg, image_path, mesh_spec, template_count, out_path);
            const auto v = est.pose.serialize();
            std::cout << "{\n  \"pose\": [";
            for (size_t i = 0; i < v.size(); ++i) std::cout << (i ? ", " : "") << v[i];
            std::cout << "],\n  \"residual\": " << est.residual
                      << ",\n  \"iterations\": " << est.iterations << ",\n  \"converged\": "
                      << (est.converged ? "true" : "false") << "\n}\n";
        } else if (app.got_subcommand(train)) {
            const auto variant =
                variant_name.empty() ? hn::Variant::Full : hn::variant_from_name(variant_name);
            const auto result = hn::run_train(cfg, dataset_dir, out_dir, variant);
            std::cout << "trained " << result.history.size() << " epochs; final L_total = "
                      << result.history.back().total << "\n";
        } else if (app.got_subcommand(eval)) {
            const auto report_out = hn::run_eval(cfg, dataset_dir, model_path, out_dir);
            std::cout << report_out.table();
        } else if (app.got_subcommand(ablate)) {
            const auto result = hn::run_ablate(cfg, dataset_dir, out_dir);
            std::cout << result.table();
        } else if (app.got_subcommand(report)) {
            hn::run_report(run_dir, out_path);
            std::cout << "report written\n";
        }
    } catch (const twinspect::Error& e) {
        std::cerr << "twinspect error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
