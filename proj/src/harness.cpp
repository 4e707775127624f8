#include "twinspect/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "twinspect/baselines.hpp"

namespace twinspect::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string map_stem(const std::string& pair_id) {
    std::string s = pair_id;
    for (char& c : s)
        if (c == '/') c = '_';
    return s;
}

json train_to_json(const calib::TrainConfig& t, int model_d) {
    return json{{"epochs", t.epochs},       {"batch", t.batch},
                {"lr", t.lr},               {"weight_decay", t.weight_decay},
                {"lambda_local", t.lambda_local}, {"lambda_global", t.lambda_global},
                {"seed", t.seed},           {"d", model_d}};
}

void train_from_json(const json& j, calib::TrainConfig& t, int& model_d) {
    t.epochs = j.value("epochs", t.epochs);
    t.batch = j.value("batch", t.batch);
    t.lr = j.value("lr", t.lr);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    t.lambda_local = j.value("lambda_local", t.lambda_local);
    t.lambda_global = j.value("lambda_global", t.lambda_global);
    t.seed = j.value("seed", t.seed);
    model_d = j.value("d", model_d);
}

// Sets tree[dotted.path] = parsed value (JSON literal when it parses,
// raw string otherwise).
void apply_override(json& tree, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw RunError("override must look like path.to.key=value: " + spec);
    const std::string path = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);
    json* node = &tree;
    size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) throw RunError("empty key in override path: " + spec);
        if (dot == std::string::npos) {
            json parsed = json::parse(value, nullptr, false);
            (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path);
    os << text;
    if (!os) throw RunError("failed writing " + path.string());
}

void write_map(const fs::path& base, const ImageF& map) {
    float lo = 0.0f, hi = 0.0f;
    for (float v : map.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    fs::create_directories(base.parent_path());
    write_pgm16(base.string() + ".pgm", map, lo, hi);
    json side{{"min", lo}, {"max", hi}};
    write_text(base.string() + ".json", side.dump(2) + "\n");
}

}  // namespace

json default_config_json() {
    json j;
    j["dataset"] = json::parse(sim::config_to_json_text(sim::DatasetConfig{}));
    j["train"] = train_to_json(calib::TrainConfig{}, 32);
    j["eval"] = {{"methods", {"avatar", "rgb", "grad", "ssim"}}, {"aupro_fpr_limit", 0.3}};
    j["ablate"] = {{"seeds", 3}};
    return j;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                      std::optional<uint64_t> seed_flag) {
    json tree = default_config_json();
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw RunError("cannot open config: " + path);
        json user;
        try {
            is >> user;
        } catch (const json::exception& e) {
            throw RunError(std::string("config parse: ") + e.what());
        }
        tree.merge_patch(user);
    }
    for (const auto& o : overrides) apply_override(tree, o);
    if (seed_flag) {
        tree["dataset"]["seed"] = *seed_flag;
        tree["train"]["seed"] = *seed_flag;
    }

    RunConfig cfg;
    cfg.raw = tree;
    cfg.dataset = sim::config_from_json_text(tree.at("dataset").dump());
    train_from_json(tree.at("train"), cfg.train, cfg.model_d);
    if (tree.contains("eval")) {
        const auto& e = tree.at("eval");
        if (e.contains("methods")) cfg.methods = e.at("methods").get<std::vector<std::string>>();
        cfg.aupro_fpr_limit = e.value("aupro_fpr_limit", cfg.aupro_fpr_limit);
    }
    if (tree.contains("ablate")) cfg.ablate_seeds = tree.at("ablate").value("seeds", cfg.ablate_seeds);
    if (cfg.model_d <= 0) throw RunError("train.d must be positive");
    return cfg;
}

// ---------------------------------------------------------------------------
// Token plumbing
// ---------------------------------------------------------------------------

calib::PairTokens pair_tokens(const sim::ImagePair& pair, int patch) {
    calib::PairTokens t;
    t.f_r = feat::extract_tokens(pair.real, patch);
    t.f_s = feat::extract_tokens(pair.render, patch);
    t.w = feat::patch_mask(pair.mask_w, patch);
    t.anomalous = pair.label == sim::Label::Anomalous;
    t.id = pair.meta.id;
    return t;
}

std::vector<calib::PairTokens> split_tokens(const std::string& dataset_dir,
                                            const sim::Manifest& manifest,
                                            const std::string& split, int patch) {
    std::vector<const sim::PairMeta*> metas;
    for (const auto& m : manifest.pairs)
        if (m.split == split) metas.push_back(&m);
    std::vector<calib::PairTokens> tokens(metas.size());
    parallel_for(metas.size(), [&](size_t i) {
        tokens[i] = pair_tokens(sim::load_pair(dataset_dir, *metas[i]), patch);
    });
    return tokens;
}

ImageF method_map(const std::string& method, const sim::ImagePair& pair,
                  const calib::CalibrationModel* model, int patch) {
    if (method == "avatar") {
        if (!model) throw RunError("avatar maps need a trained model");
        return calib::score_map(pair_tokens(pair, patch), *model, pair.mask_w);
    }
    if (method == "rgb") return baseline::rgb_residual(pair.real, pair.render, pair.mask_w);
    if (method == "grad") return baseline::gradient_residual(pair.real, pair.render, pair.mask_w);
    if (method == "ssim") return baseline::ssim_residual(pair.real, pair.render, pair.mask_w);
    throw RunError("unknown method: " + method);
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

sim::Manifest run_gen(const RunConfig& cfg, const std::string& out_dir) {
    sim::Manifest manifest = sim::generate_dataset(cfg.dataset, out_dir);
    write_run_manifest(out_dir, "gen", cfg.raw, cfg.dataset.seed);
    return manifest;
}

void run_plan(const RunConfig& cfg, const std::string& out_path) {
    const mesh::TriMesh m = mesh::load_mesh_spec(cfg.dataset.train_mesh);
    const auto plan = geom::sample_viewpoints(
        m.bbox_center(), cfg.dataset.radius_scale * m.bounding_sphere_radius(),
        cfg.dataset.viewpoint_target, cfg.dataset.elev_min, cfg.dataset.elev_max);
    json j;
    j["mesh"] = cfg.dataset.train_mesh;
    j["center"] = {plan.center.x(), plan.center.y(), plan.center.z()};
    j["radius"] = plan.radius;
    json poses = json::array();
    for (const auto& p : plan.poses) {
        const auto v = p.serialize();
        poses.push_back(std::vector<double>(v.begin(), v.end()));
    }
    j["poses"] = std::move(poses);
    write_text(out_path, j.dump(2) + "\n");
}

pose::PoseEstimate run_pose(const RunConfig& cfg, const std::string& image_path,
                            const std::string& mesh_spec, int template_count,
                            const std::string& out_path) {
    const mesh::TriMesh m = mesh::load_mesh_spec(mesh_spec);
    const geom::CameraIntrinsics k(cfg.dataset.fx, cfg.dataset.fy, cfg.dataset.cx, cfg.dataset.cy,
                                   cfg.dataset.width, cfg.dataset.height);
    const ImageF image = read_pgm(image_path);
    const Mask s0 = pose::extract_foreground(image);
    const auto plan = geom::sample_viewpoints(
        m.bbox_center(), cfg.dataset.radius_scale * m.bounding_sphere_radius(), template_count,
        cfg.dataset.elev_min, cfg.dataset.elev_max);
    const pose::PoseEstimate coarse = pose::coarse_pose_match(s0, m, k, plan);
    pose::RefineOptions opts;
    opts.seed = cfg.train.seed;
    const pose::PoseEstimate refined = pose::refine_pose(s0, m, k, coarse.pose, opts);

    json j;
    const auto v = refined.pose.serialize();
    j["pose"] = std::vector<double>(v.begin(), v.end());
    j["residual"] = refined.residual;
    j["iterations"] = refined.iterations;
    j["converged"] = refined.converged;
    const auto cv = coarse.pose.serialize();
    j["coarse"] = {{"pose", std::vector<double>(cv.begin(), cv.end())},
                   {"residual", coarse.residual},
                   {"templates", coarse.iterations}};
    if (!out_path.empty()) write_text(out_path, j.dump(2) + "\n");
    return refined;
}

Variant variant_from_name(const std::string& name) {
    if (name == "full") return Variant::Full;
    if (name == "no_p_real") return Variant::NoPReal;
    if (name == "no_p_render") return Variant::NoPRender;
    if (name == "no_local") return Variant::NoLocal;
    throw UnknownVariant("unknown ablation variant: " + name);
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoPReal: return "no_p_real";
        case Variant::NoPRender: return "no_p_render";
        default: return "no_local";
    }
}

namespace {

calib::TrainResult train_variant(const RunConfig& cfg, const std::string& dataset_dir,
                                 Variant variant, uint64_t seed) {
    const sim::Manifest manifest = sim::load_manifest(dataset_dir);
    const auto tokens = split_tokens(dataset_dir, manifest, "train", cfg.dataset.patch);
    if (tokens.empty()) throw RunError("dataset has no train pairs");

    calib::TrainConfig tc = cfg.train;
    tc.seed = seed;
    if (variant == Variant::NoLocal) tc.lambda_local = 0.0;
    calib::CalibrationModel model =
        calib::CalibrationModel::init(tokens.front().f_r.dim, cfg.model_d, seed);
    model.identity_phi_r = variant == Variant::NoPReal;
    model.identity_phi_s = variant == Variant::NoPRender;
    return calib::train(tokens, model, tc);
}

}  // namespace

calib::TrainResult run_train(const RunConfig& cfg, const std::string& dataset_dir,
                             const std::string& out_dir, Variant variant) {
    calib::TrainResult result = train_variant(cfg, dataset_dir, variant, cfg.train.seed);
    fs::create_directories(out_dir);
    calib::save_model((fs::path(out_dir) / "model.calm").string(), result.model);
    calib::save_history_csv((fs::path(out_dir) / "loss_history.csv").string(), result.history);
    json extra = cfg.raw;
    extra["variant"] = variant_name(variant);
    extra["dataset_dir"] = dataset_dir;
    write_run_manifest(out_dir, "train", extra, cfg.train.seed);
    return result;
}

metrics::EvalReport run_eval(const RunConfig& cfg, const std::string& dataset_dir,
                             const std::string& model_path, const std::string& out_dir) {
    const sim::Manifest manifest = sim::load_manifest(dataset_dir);
    std::optional<calib::CalibrationModel> model;
    const bool wants_avatar =
        std::find(cfg.methods.begin(), cfg.methods.end(), "avatar") != cfg.methods.end();
    if (wants_avatar) model = calib::load_model(model_path);

    std::vector<const sim::PairMeta*> test_pairs;
    for (const auto& m : manifest.pairs)
        if (m.split == "test") test_pairs.push_back(&m);
    if (test_pairs.empty()) throw RunError("dataset has no test pairs");

    fs::create_directories(out_dir);
    parallel_for(test_pairs.size(), [&](size_t i) {
        const sim::ImagePair pair = sim::load_pair(dataset_dir, *test_pairs[i]);
        for (const auto& method : cfg.methods) {
            const ImageF map =
                method_map(method, pair, model ? &*model : nullptr, cfg.dataset.patch);
            write_map(fs::path(out_dir) / "maps" / method / map_stem(pair.meta.id), map);
        }
    });

    json run;
    run["dataset"] = dataset_dir;
    run["model"] = wants_avatar ? model_path : "";
    run["methods"] = cfg.methods;
    run["aupro_fpr_limit"] = cfg.aupro_fpr_limit;
    write_text(fs::path(out_dir) / "run.json", run.dump(2) + "\n");

    const metrics::EvalReport report = metrics::evaluate(out_dir, cfg.methods);
    write_text(fs::path(out_dir) / "eval.txt", report.table());
    write_text(fs::path(out_dir) / "eval.csv", report.csv());
    write_run_manifest(out_dir, "eval", cfg.raw, cfg.train.seed);
    return report;
}

metrics::MethodRow ablate_variant(Variant v, const std::string& dataset_dir, const RunConfig& cfg,
                                  uint64_t seed, const std::string& work_dir) {
    calib::TrainResult trained = train_variant(cfg, dataset_dir, v, seed);
    if (!work_dir.empty()) {
        fs::create_directories(work_dir);
        calib::save_model((fs::path(work_dir) / "model.calm").string(), trained.model);
        calib::save_history_csv((fs::path(work_dir) / "loss_history.csv").string(),
                                trained.history);
    }

    const sim::Manifest manifest = sim::load_manifest(dataset_dir);
    std::vector<const sim::PairMeta*> test_pairs;
    for (const auto& m : manifest.pairs)
        if (m.split == "test") test_pairs.push_back(&m);
    std::vector<ImageF> maps(test_pairs.size());
    std::vector<Mask> gts(test_pairs.size());
    std::vector<size_t> fg(test_pairs.size());
    std::vector<int> labels(test_pairs.size());
    parallel_for(test_pairs.size(), [&](size_t i) {
        const sim::ImagePair pair = sim::load_pair(dataset_dir, *test_pairs[i]);
        maps[i] = method_map("avatar", pair, &trained.model, cfg.dataset.patch);
        gts[i] = pair.gt;
        fg[i] = pair.mask_w.count();
        labels[i] = pair.label == sim::Label::Anomalous ? 1 : 0;
    });
    metrics::MethodRow row =
        metrics::evaluate_method(variant_name(v), maps, gts, fg, labels, cfg.aupro_fpr_limit);
    return row;
}

double AblationResult::image_mean(size_t variant, size_t seed) const {
    const auto& r = rows[variant][seed];
    return (r.i_auroc + r.i_ap + r.i_f1) / 3.0;
}

double AblationResult::pixel_mean(size_t variant, size_t seed) const {
    const auto& r = rows[variant][seed];
    return (r.p_auroc + r.p_ap + r.p_f1 + r.aupro) / 4.0;
}

namespace {
std::pair<double, double> mean_std(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= double(v.size());
    double s2 = 0;
    for (double x : v) s2 += (x - m) * (x - m);
    return {m, v.size() > 1 ? std::sqrt(s2 / double(v.size() - 1)) : 0.0};
}
}  // namespace

std::string AblationResult::table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "variant        image-level      pixel-level      pixel-AP\n";
    for (size_t v = 0; v < variants.size(); ++v) {
        std::vector<double> img, pix, pap;
        for (size_t s = 0; s < seeds.size(); ++s) {
            img.push_back(image_mean(v, s) * 100.0);
            pix.push_back(pixel_mean(v, s) * 100.0);
            pap.push_back(rows[v][s].p_ap * 100.0);
        }
        const auto [im, is] = mean_std(img);
        const auto [pm, ps] = mean_std(pix);
        const auto [am, as] = mean_std(pap);
        os << std::left << std::setw(13) << variants[v] << std::right << std::setw(7) << im
           << " +-" << std::setw(5) << is << std::setw(8) << pm << " +-" << std::setw(5) << ps
           << std::setw(8) << am << " +-" << std::setw(5) << as << "\n";
    }
    return os.str();
}

std::string AblationResult::csv() const {
    std::ostringstream os;
    os << "variant,seed,I-AUROC,I-AP,I-F1,P-AUROC,P-AP,P-F1,AUPRO,image_mean,pixel_mean\n";
    os << std::fixed << std::setprecision(4);
    for (size_t v = 0; v < variants.size(); ++v)
        for (size_t s = 0; s < seeds.size(); ++s) {
            const auto& r = rows[v][s];
            os << variants[v] << "," << seeds[s];
            for (double x : {r.i_auroc, r.i_ap, r.i_f1, r.p_auroc, r.p_ap, r.p_f1, r.aupro,
                             image_mean(v, s), pixel_mean(v, s)})
                os << "," << x * 100.0;
            os << "\n";
        }
    return os.str();
}

AblationResult run_ablate(const RunConfig& cfg, const std::string& dataset_dir,
                          const std::string& out_dir) {
    AblationResult result;
    result.variants = {"full", "no_p_real", "no_p_render", "no_local"};
    for (int s = 0; s < cfg.ablate_seeds; ++s) result.seeds.push_back(cfg.train.seed + uint64_t(s));
    result.rows.resize(result.variants.size());
    for (size_t v = 0; v < result.variants.size(); ++v) {
        for (uint64_t seed : result.seeds) {
            const std::string work =
                (fs::path(out_dir) / (result.variants[v] + "_s" + std::to_string(seed))).string();
            result.rows[v].push_back(
                ablate_variant(variant_from_name(result.variants[v]), dataset_dir, cfg, seed, work));
        }
    }
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "ablation.txt", result.table());
    write_text(fs::path(out_dir) / "ablation.csv", result.csv());
    write_run_manifest(out_dir, "ablate", cfg.raw, cfg.train.seed);
    return result;
}

void run_report(const std::string& run_dir, const std::string& out_path) {
    std::ifstream is(fs::path(run_dir) / "eval.csv");
    if (!is) throw RunError("no eval.csv under " + run_dir + "; run eval first");
    std::ostringstream body;
    body << is.rdbuf();
    std::ostringstream os;
    os << "evaluation report for " << run_dir << "\n\n";
    std::ifstream table(fs::path(run_dir) / "eval.txt");
    os << table.rdbuf() << "\ncsv:\n" << body.str();
    const std::string target = out_path.empty() ? (fs::path(run_dir) / "report.txt").string() : out_path;
    write_text(target, os.str());
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

uint64_t hash_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RunError("cannot hash missing file: " + path);
    uint64_t h = kFnvOffset;
    char buf[65536];
    while (is.read(buf, sizeof buf) || is.gcount() > 0) {
        h = fnv1a(buf, size_t(is.gcount()), h);
        if (!is) break;
    }
    return h;
}

uint64_t write_run_manifest(const std::string& dir, const std::string& command,
                            const nlohmann::json& config, uint64_t seed) {
    std::vector<std::string> files;
    for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator();
         ++it)
        if (it->is_regular_file() && it->path().filename() != "run_manifest.json")
            files.push_back(fs::relative(it->path(), dir).generic_string());
    std::sort(files.begin(), files.end());

    json outputs = json::array();
    uint64_t combined = kFnvOffset;
    char hex[32];
    for (const auto& rel : files) {
        const uint64_t h = hash_file((fs::path(dir) / rel).string());
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
        outputs.push_back({{"path", rel}, {"fnv64", hex}});
        combined = fnv1a(rel, combined);
        combined = fnv1a(std::string(hex), combined);
    }
    json manifest;
    manifest["command"] = command;
    manifest["seed"] = seed;
    manifest["config"] = config;
    manifest["outputs"] = std::move(outputs);
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(combined));
    manifest["content_hash"] = hex;
    write_text(fs::path(dir) / "run_manifest.json", manifest.dump(2) + "\n");
    return combined;
}

uint64_t read_manifest_hash(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "run_manifest.json");
    if (!is) throw RunError("no run_manifest.json under " + dir);
    json j;
    is >> j;
    return std::stoull(j.at("content_hash").get<std::string>(), nullptr, 16);
}

}  // namespace twinspect::harness
