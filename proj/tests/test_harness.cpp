#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "twinspect/harness.hpp"

using namespace twinspect;
namespace fs = std::filesystem;
namespace hn = twinspect::harness;

namespace {

fs::path temp_dir(const char* name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Small-but-real pipeline config: 112x112 images, 8x8 token grid.
hn::RunConfig tiny_config(uint64_t seed) {
    return hn::load_config(
        "",
        {"dataset.image.width=112", "dataset.image.height=112", "dataset.image.fx=190",
         "dataset.image.fy=190", "dataset.image.cx=56", "dataset.image.cy=56",
         "dataset.viewpoints.target_count=8", "dataset.counts.train=6",
         "dataset.counts.test_normal=2", "dataset.counts.test_texture=1",
         "dataset.counts.test_structural=1", "dataset.counts.test_logical=1",
         "train.epochs=3", "train.batch=2", "train.lr=0.001", "ablate.seeds=1"},
        seed);
}

}  // namespace

TEST_CASE("config: dotted-path overrides and the seed flag") {
    const auto cfg = hn::load_config("", {"dataset.seed=77", "train.lr=0.5", "eval.methods=[\"rgb\"]"},
                                     std::nullopt);
    CHECK(cfg.dataset.seed == 77);
    CHECK(cfg.train.lr == 0.5);
    REQUIRE(cfg.methods.size() == 1);
    CHECK(cfg.methods[0] == "rgb");

    const auto seeded = hn::load_config("", {}, uint64_t(9));
    CHECK(seeded.dataset.seed == 9);
    CHECK(seeded.train.seed == 9);

    CHECK_THROWS_AS(hn::load_config("", {"no_equals_sign"}, std::nullopt), hn::RunError);
    CHECK_THROWS_AS(hn::variant_from_name("bogus"), hn::UnknownVariant);
}

TEST_CASE("end-to-end tiny pipeline: gen, train, eval, report, determinism") {
    const auto cfg = tiny_config(3);
    const fs::path data = temp_dir("ts_e2e_data");
    const auto manifest = hn::run_gen(cfg, data.string());
    CHECK(manifest.pairs.size() == 11);
    const uint64_t gen_hash = hn::read_manifest_hash(data.string());

    // Regenerating with the same config reproduces the content hash.
    const fs::path data2 = temp_dir("ts_e2e_data2");
    hn::run_gen(cfg, data2.string());
    CHECK(hn::read_manifest_hash(data2.string()) == gen_hash);

    // Train.
    const fs::path run = temp_dir("ts_e2e_run");
    const auto trained = hn::run_train(cfg, data.string(), run.string());
    CHECK(trained.history.size() == 3);
    CHECK(fs::exists(run / "model.calm"));
    CHECK(fs::exists(run / "loss_history.csv"));
    const uint64_t train_hash = hn::read_manifest_hash(run.string());
    const fs::path run2 = temp_dir("ts_e2e_run2");
    hn::run_train(cfg, data.string(), run2.string());
    CHECK(hn::read_manifest_hash(run2.string()) == train_hash);

    // Eval over all four methods.
    const fs::path eval_dir = temp_dir("ts_e2e_eval");
    const uint64_t dataset_hash_before = hn::read_manifest_hash(data.string());
    const auto report =
        hn::run_eval(cfg, data.string(), (run / "model.calm").string(), eval_dir.string());
    REQUIRE(report.rows.size() == 4);
    for (const auto& row : report.rows) {
        for (double v : {row.i_auroc, row.i_ap, row.i_f1, row.p_auroc, row.p_ap, row.p_f1,
                         row.aupro}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK(fs::exists(eval_dir / "eval.csv"));
    CHECK(fs::exists(eval_dir / "maps" / "avatar" / "test_0000.pgm"));

    // Eval must not touch the dataset.
    hn::write_run_manifest(data.string(), "gen", cfg.raw, cfg.dataset.seed);
    CHECK(hn::read_manifest_hash(data.string()) == dataset_hash_before);

    // evaluate() again from disk gives identical rows; duplicate method
    // names produce identical duplicate rows.
    const auto again = metrics::evaluate(eval_dir.string(), {"rgb", "rgb"});
    REQUIRE(again.rows.size() == 2);
    CHECK(again.rows[0].p_ap == again.rows[1].p_ap);
    CHECK(again.rows[0].i_auroc == again.rows[1].i_auroc);

    // Missing maps surface the pair id.
    fs::remove(eval_dir / "maps" / "rgb" / "test_0002.pgm");
    CHECK_THROWS_WITH_AS(metrics::evaluate(eval_dir.string(), {"rgb"}),
                         doctest::Contains("test/0002"), metrics::MissingScores);

    // Report renders from the stored CSV.
    hn::run_report(eval_dir.string(), "");
    CHECK(fs::exists(eval_dir / "report.txt"));
}

TEST_CASE("eval on an anomaly-free dataset surfaces NoPositives per metric") {
    auto cfg = tiny_config(4);
    cfg = hn::load_config("",
                          {"dataset.image.width=112", "dataset.image.height=112",
                           "dataset.image.fx=190", "dataset.image.fy=190", "dataset.image.cx=56",
                           "dataset.image.cy=56", "dataset.viewpoints.target_count=8",
                           "dataset.counts.train=2", "dataset.counts.test_normal=2",
                           "dataset.counts.test_texture=0", "dataset.counts.test_structural=0",
                           "dataset.counts.test_logical=0", "train.epochs=1", "train.batch=2",
                           "eval.methods=[\"rgb\"]"},
                          uint64_t(4));
    const fs::path data = temp_dir("ts_nopos_data");
    hn::run_gen(cfg, data.string());
    const fs::path eval_dir = temp_dir("ts_nopos_eval");
    try {
        hn::run_eval(cfg, data.string(), "", eval_dir.string());
        FAIL("expected NoPositives");
    } catch (const metrics::NoPositives& e) {
        const std::string what = e.what();
        CHECK(what.find("i_ap") != std::string::npos);
        CHECK(what.find("aupro") != std::string::npos);
    }
}

TEST_CASE("ablate: four variant rows with deterministic full rerun") {
    const auto cfg = tiny_config(5);
    const fs::path data = temp_dir("ts_ablate_data");
    hn::run_gen(cfg, data.string());

    const auto row_a = hn::ablate_variant(hn::Variant::Full, data.string(), cfg, 11, "");
    const auto row_b = hn::ablate_variant(hn::Variant::Full, data.string(), cfg, 11, "");
    CHECK(row_a.p_ap == row_b.p_ap);
    CHECK(row_a.i_auroc == row_b.i_auroc);

    const fs::path out = temp_dir("ts_ablate_out");
    const auto result = hn::run_ablate(cfg, data.string(), out.string());
    CHECK(result.variants.size() == 4);
    CHECK(result.rows.size() == 4);
    for (const auto& variant_rows : result.rows) CHECK(variant_rows.size() == 1);
    CHECK(fs::exists(out / "ablation.csv"));
    const std::string table = result.table();
    for (const char* name : {"full", "no_p_real", "no_p_render", "no_local"})
        CHECK(table.find(name) != std::string::npos);
}

TEST_CASE("pose subcommand produces a usable estimate on a rendered image") {
    const auto cfg = hn::load_config("", {"dataset.image.width=140", "dataset.image.height=140",
                                          "dataset.image.fx=240", "dataset.image.fy=240",
                                          "dataset.image.cx=70", "dataset.image.cy=70"},
                                     uint64_t(6));
    const auto m = mesh::load_mesh_spec(cfg.dataset.train_mesh);
    const geom::CameraIntrinsics k(240, 240, 70, 70, 140, 140);
    const double r = 2.0 * m.bounding_sphere_radius();
    const auto plan = geom::sample_viewpoints(m.bbox_center(), r, 24, 25, 75);
    const auto cam = plan.poses[7];
    const auto out = render::rasterize(m, geom::Se3Pose::identity(), cam, k,
                                       geom::Vec3(0.25, -0.2, -0.95).normalized());
    const fs::path img = fs::temp_directory_path() / "ts_pose_obs.pgm";
    write_pgm(img.string(), out.image);

    const fs::path pose_json = fs::temp_directory_path() / "ts_pose_est.json";
    const auto est = hn::run_pose(cfg, img.string(), cfg.dataset.train_mesh, 24, pose_json.string());
    CHECK(fs::exists(pose_json));
    const geom::Se3Pose truth = cam.inverse();
    const double dist_err = (est.pose.translation() - truth.translation()).norm() /
                            truth.translation().norm();
    CHECK(dist_err < 0.05);
}
