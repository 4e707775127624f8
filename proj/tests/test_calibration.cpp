#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "twinspect/calibration.hpp"

using namespace twinspect;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

feat::PatchTokens random_tokens(int gh, int gw, int dim, uint64_t seed, double lo = -1, double hi = 1) {
    feat::PatchTokens t;
    t.grid_h = gh;
    t.grid_w = gw;
    t.dim = dim;
    t.data.resize(gh * gw, dim);
    Rng rng(seed);
    for (int r = 0; r < t.count(); ++r)
        for (int c = 0; c < dim; ++c) t.data(r, c) = float(rng.uniform(lo, hi));
    return t;
}

feat::PatchMask ones_mask(int gh, int gw) {
    feat::PatchMask w;
    w.grid_h = gh;
    w.grid_w = gw;
    w.bits.assign(size_t(gh) * gw, 1);
    return w;
}

calib::PairTokens make_pair_tokens(int gh, int gw, int dim, uint64_t seed) {
    calib::PairTokens p;
    p.f_r = random_tokens(gh, gw, dim, seed);
    p.f_s = random_tokens(gh, gw, dim, seed + 1);
    p.w = ones_mask(gh, gw);
    return p;
}

double cosine_ref(const VectorXd& a, const VectorXd& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0 || nb == 0) return 0;
    return a.dot(b) / (na * nb);
}

}  // namespace

TEST_CASE("projectors: identity construction, zero weights, dense oracle") {
    const int d = 6;
    calib::CalibrationModel model = calib::CalibrationModel::init(d, d, 1);
    model.phi_r.w1 = MatrixXd::Identity(d, d);
    model.phi_r.b1 = VectorXd::Zero(d);
    model.phi_r.w2 = MatrixXd::Identity(d, d);
    model.phi_r.b2 = VectorXd::Zero(d);
    const auto f = random_tokens(2, 3, d, 2);
    const auto z = calib::project_real(f, model);
    for (int r = 0; r < f.count(); ++r)
        for (int c = 0; c < d; ++c)
            CHECK(z.data(r, c) == doctest::Approx(std::max(0.0f, f.data(r, c))).epsilon(1e-6));

    model.phi_s.w1.setZero();
    model.phi_s.b1.setZero();
    model.phi_s.w2.setZero();
    model.phi_s.b2.setZero();
    const auto zs = calib::project_render(f, model);
    for (int r = 0; r < f.count(); ++r)
        for (int c = 0; c < d; ++c) CHECK(zs.data(r, c) == 0.0f);

    // Random weights against a naive triple-loop oracle.
    calib::CalibrationModel rnd = calib::CalibrationModel::init(5, 7, 3);
    const auto fr = random_tokens(3, 3, 5, 4);
    const auto got = calib::project_real(fr, rnd);
    for (int r = 0; r < fr.count(); ++r)
        for (int c = 0; c < 7; ++c) {
            double acc2 = 0;
            for (int h = 0; h < 7; ++h) {
                double pre = rnd.phi_r.b1(h);
                for (int i = 0; i < 5; ++i) pre += double(fr.data(r, i)) * rnd.phi_r.w1(i, h);
                acc2 += std::max(0.0, pre) * rnd.phi_r.w2(h, c);
            }
            acc2 += rnd.phi_r.b2(c);
            CHECK(double(got.data(r, c)) == doctest::Approx(acc2).epsilon(1e-6));
        }

    CHECK_THROWS_AS(calib::project_real(random_tokens(2, 2, 9, 5), rnd), calib::ShapeMismatch);
}

TEST_CASE("affinity: uniform, saturated, and hand-computed cases") {
    const int d = 4;
    calib::CalibrationModel model = calib::CalibrationModel::init(d, d, 6);
    model.wq = MatrixXd::Identity(d, d);
    model.we = MatrixXd::Identity(d, d);

    // All-zero embeddings: uniform rows.
    feat::PatchTokens zero = random_tokens(2, 2, d, 7);
    zero.data.setZero();
    const MatrixXd mu = calib::affinity(zero, zero, model);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(mu(i, j) == doctest::Approx(0.25).epsilon(1e-12));

    // Orthogonal scaled tokens saturate the diagonal.
    feat::PatchTokens ortho = zero;
    for (int i = 0; i < 4; ++i) ortho.data(i, i) = 40.0f;
    const MatrixXd ms = calib::affinity(ortho, ortho, model);
    for (int i = 0; i < 4; ++i) CHECK(ms(i, i) > 0.99);

    // Random 4-token case against a scalar softmax computation.
    const auto zr = random_tokens(2, 2, d, 8);
    const auto zs = random_tokens(2, 2, d, 9);
    calib::CalibrationModel rnd = calib::CalibrationModel::init(d, d, 10);
    const MatrixXd got = calib::affinity(zr, zs, rnd);
    for (int i = 0; i < 4; ++i) {
        double row[4], mx = -1e300;
        for (int j = 0; j < 4; ++j) {
            double logit = 0;
            for (int a = 0; a < d; ++a) {
                double qa = 0, eb = 0;
                for (int b = 0; b < d; ++b) {
                    qa += double(zr.data(i, b)) * rnd.wq(b, a);
                    eb += double(zs.data(j, b)) * rnd.we(b, a);
                }
                logit += qa * eb;
            }
            row[j] = logit / std::sqrt(double(d));
            mx = std::max(mx, row[j]);
        }
        double denom = 0;
        for (int j = 0; j < 4; ++j) denom += std::exp(row[j] - mx);
        for (int j = 0; j < 4; ++j)
            CHECK(got(i, j) == doctest::Approx(std::exp(row[j] - mx) / denom).epsilon(1e-9));
        double sum = 0;
        for (int j = 0; j < 4; ++j) sum += got(i, j);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("reassemble: identity, uniform, and product oracle") {
    const int d = 5, n = 6;
    calib::CalibrationModel model = calib::CalibrationModel::init(d, d, 11);
    model.wd = MatrixXd::Identity(d, d);
    const auto zs = random_tokens(2, 3, d, 12);
    const auto same = calib::reassemble(MatrixXd::Identity(n, n), zs, model);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c)
            CHECK(double(same.data(r, c)) == doctest::Approx(double(zs.data(r, c))).epsilon(1e-6));

    const MatrixXd uniform = MatrixXd::Constant(n, n, 1.0 / n);
    const auto mean = calib::reassemble(uniform, zs, model);
    const VectorXd mu = zs.data.cast<double>().colwise().mean().transpose();
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c)
            CHECK(double(mean.data(r, c)) == doctest::Approx(mu(c)).epsilon(1e-6));

    calib::CalibrationModel rnd = calib::CalibrationModel::init(d, d, 13);
    MatrixXd m = MatrixXd::Zero(n, n);
    Rng rng(14);
    for (int i = 0; i < n; ++i) {
        double sum = 0;
        for (int j = 0; j < n; ++j) {
            m(i, j) = rng.uniform();
            sum += m(i, j);
        }
        m.row(i) /= sum;
    }
    const auto got = calib::reassemble(m, zs, rnd);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) {
            double acc = 0;
            for (int q = 0; q < n; ++q) {
                double dq = 0;
                for (int b = 0; b < d; ++b) dq += double(zs.data(q, b)) * rnd.wd(b, c);
                acc += m(r, q) * dq;
            }
            CHECK(double(got.data(r, c)) == doctest::Approx(acc).epsilon(1e-6));
        }
}

TEST_CASE("reassembled rows stay in the dictionary convex hull") {
    const int d = 8, gh = 3, gw = 3;
    calib::CalibrationModel model = calib::CalibrationModel::init(d, d, 15);
    const auto zr = random_tokens(gh, gw, d, 16);
    const auto zs = random_tokens(gh, gw, d, 17);
    const MatrixXd m = calib::affinity(zr, zs, model);
    const auto zhat = calib::reassemble(m, zs, model);
    const MatrixXd dict = zs.data.cast<double>() * model.wd;
    Rng rng(18);
    for (int t = 0; t < 20; ++t) {
        VectorXd dir(d);
        for (int i = 0; i < d; ++i) dir(i) = rng.uniform(-1, 1);
        const VectorXd proj = dict * dir;
        const double lo = proj.minCoeff(), hi = proj.maxCoeff();
        for (int r = 0; r < zhat.count(); ++r) {
            const double v = zhat.data.row(r).cast<double>() * dir;
            CHECK(v >= lo - 1e-6);
            CHECK(v <= hi + 1e-6);
        }
    }
}

TEST_CASE("local and global losses: trivial and oracle cases") {
    const int d = 5;
    auto zr = random_tokens(2, 2, d, 19, 0.1, 1.0);
    feat::PatchTokens same = zr;
    const auto w = ones_mask(2, 2);
    CHECK(std::abs(calib::local_loss(zr, same, w)) < 1e-12);

    feat::PatchTokens anti = zr;
    anti.data = -anti.data;
    CHECK(calib::local_loss(zr, anti, w) == doctest::Approx(2.0).epsilon(1e-9));

    const auto zh = random_tokens(2, 2, d, 20);
    feat::PatchMask half = ones_mask(2, 2);
    half.bits[0] = half.bits[2] = 0;
    double acc = 0;
    for (int p : {1, 3})
        acc += 1.0 - cosine_ref(zr.data.row(p).cast<double>().transpose(),
                                zh.data.row(p).cast<double>().transpose());
    CHECK(calib::local_loss(zr, zh, half) == doctest::Approx(acc / 2.0).epsilon(1e-9));

    feat::PatchMask none = ones_mask(2, 2);
    none.bits.assign(4, 0);
    CHECK_THROWS_AS(calib::local_loss(zr, zh, none), calib::EmptyForegroundMask);

    // Global loss: zero on equal, scale-invariant, oracle on random.
    CHECK(std::abs(calib::global_loss(zr, zr)) < 1e-12);
    feat::PatchTokens scaled = zr;
    scaled.data *= 3.0f;
    CHECK(std::abs(calib::global_loss(scaled, zr)) < 1e-9);
    const VectorXd gh_ = zh.data.cast<double>().colwise().mean().transpose();
    const VectorXd gs_ = zr.data.cast<double>().colwise().mean().transpose();
    CHECK(calib::global_loss(zh, zr) == doctest::Approx(1.0 - cosine_ref(gh_, gs_)).epsilon(1e-9));
}

TEST_CASE("forward_backward: zero lambdas give zero gradients") {
    const auto pair = make_pair_tokens(3, 3, 6, 21);
    const auto model = calib::CalibrationModel::init(6, 8, 22);
    const auto fb = calib::forward_backward(pair, model, 0.0, 0.0);
    CHECK(fb.total == 0.0);
    CHECK(fb.grads.wq.cwiseAbs().maxCoeff() == 0.0);
    CHECK(fb.grads.we.cwiseAbs().maxCoeff() == 0.0);
    CHECK(fb.grads.wd.cwiseAbs().maxCoeff() == 0.0);
    CHECK(fb.grads.phi_r.w1.cwiseAbs().maxCoeff() == 0.0);
    CHECK(fb.grads.phi_s.w2.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward_backward: gradients match central finite differences") {
    const auto pair = make_pair_tokens(3, 4, 5, 23);
    calib::CalibrationModel model = calib::CalibrationModel::init(5, 7, 24);
    const double ll = 1.0, lg = 1.0, h = 1e-5;
    const auto fb = calib::forward_backward(pair, model, ll, lg);

    struct Slot {
        MatrixXd* w;
        const MatrixXd* g;
    };
    MatrixXd b1r(model.phi_r.b1), b2r(model.phi_r.b2), b1s(model.phi_s.b1), b2s(model.phi_s.b2);
    // Probe a few entries of every tensor.
    auto probe = [&](MatrixXd& w, const MatrixXd& g, int count, uint64_t seed) {
        Rng rng(seed);
        for (int t = 0; t < count; ++t) {
            const int i = int(rng.below(uint64_t(w.rows())));
            const int j = int(rng.below(uint64_t(w.cols())));
            const double save = w(i, j);
            w(i, j) = save + h;
            const double fp = calib::forward_backward(pair, model, ll, lg).total;
            w(i, j) = save - h;
            const double fm = calib::forward_backward(pair, model, ll, lg).total;
            w(i, j) = save;
            const double fd = (fp - fm) / (2 * h);
            const double an = g(i, j);
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            CHECK(rel < 1e-4);
        }
    };
    probe(model.wq, fb.grads.wq, 3, 100);
    probe(model.we, fb.grads.we, 3, 101);
    probe(model.wd, fb.grads.wd, 3, 102);
    probe(model.phi_r.w1, fb.grads.phi_r.w1, 3, 103);
    probe(model.phi_r.w2, fb.grads.phi_r.w2, 2, 104);
    probe(model.phi_s.w1, fb.grads.phi_s.w1, 3, 105);
    probe(model.phi_s.w2, fb.grads.phi_s.w2, 2, 106);
    // Bias vectors through a matrix view.
    {
        Rng rng(107);
        for (MatrixXd* bias : {&b1r, &b2r, &b1s, &b2s}) (void)bias;
        for (int t = 0; t < 2; ++t) {
            const int j = int(rng.below(uint64_t(model.phi_r.b1.size())));
            const double save = model.phi_r.b1(j);
            model.phi_r.b1(j) = save + h;
            const double fp = calib::forward_backward(pair, model, ll, lg).total;
            model.phi_r.b1(j) = save - h;
            const double fm = calib::forward_backward(pair, model, ll, lg).total;
            model.phi_r.b1(j) = save;
            const double fd = (fp - fm) / (2 * h);
            const double an = fb.grads.phi_r.b1(j);
            CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) < 1e-4);
        }
    }
}

TEST_CASE("forward_backward: masked-only input channels get zero gradient") {
    // Channel 4 of F_r is nonzero only on masked-out patches; with
    // lambda_global = 0 nothing can reach phi_r.w1 row 4.
    calib::PairTokens pair = make_pair_tokens(2, 2, 5, 25);
    pair.w.bits = {1, 0, 1, 0};
    for (int p = 0; p < 4; ++p) pair.f_r.data(p, 4) = pair.w.bits[size_t(p)] ? 0.0f : 1.3f;
    const auto model = calib::CalibrationModel::init(5, 6, 26);
    const auto fb = calib::forward_backward(pair, model, 1.0, 0.0);
    CHECK(fb.grads.phi_r.w1.row(4).cwiseAbs().maxCoeff() == 0.0);
    // Other rows do receive gradient.
    CHECK(fb.grads.phi_r.w1.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("train: overfits one pair and is seed-deterministic") {
    std::vector<calib::PairTokens> pairs{make_pair_tokens(4, 4, 6, 27)};
    calib::TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch = 1;
    cfg.lr = 3e-3;
    cfg.weight_decay = 0.0;
    cfg.seed = 5;
    const auto init = calib::CalibrationModel::init(6, 8, 28);
    const auto run1 = calib::train(pairs, init, cfg);
    CHECK(run1.history.back().total < 0.3 * run1.history.front().total);

    const auto run2 = calib::train(pairs, init, cfg);
    REQUIRE(run1.history.size() == run2.history.size());
    for (size_t i = 0; i < run1.history.size(); ++i) {
        CHECK(run1.history[i].total == run2.history[i].total);
        CHECK(run1.history[i].local == run2.history[i].local);
        CHECK(run1.history[i].global == run2.history[i].global);
    }
}

TEST_CASE("train: dropping the global loss lets the pooled alignment decay") {
    std::vector<calib::PairTokens> pairs;
    for (int i = 0; i < 4; ++i) pairs.push_back(make_pair_tokens(4, 4, 6, 30 + uint64_t(i)));
    calib::TrainConfig with;
    with.epochs = 60;
    with.batch = 2;
    with.lr = 3e-3;
    with.seed = 6;
    calib::TrainConfig without = with;
    without.lambda_global = 0.0;
    const auto init = calib::CalibrationModel::init(6, 8, 31);
    const auto run_with = calib::train(pairs, init, with);
    const auto run_without = calib::train(pairs, init, without);

    auto mean_global = [&](const calib::CalibrationModel& model) {
        double acc = 0;
        for (const auto& p : pairs) {
            const auto zs = calib::project_render(p.f_s, model);
            const auto m = calib::affinity(calib::project_real(p.f_r, model), zs, model);
            acc += calib::global_loss(calib::reassemble(m, zs, model), zs);
        }
        return acc / double(pairs.size());
    };
    CHECK(mean_global(run_without.model) > mean_global(run_with.model));
}

TEST_CASE("train rejects anomalous pairs") {
    auto pair = make_pair_tokens(2, 2, 5, 33);
    pair.anomalous = true;
    pair.id = "test/0003";
    CHECK_THROWS_AS(calib::train({pair}, calib::CalibrationModel::init(5, 6, 34), {}),
                    calib::AnomalousTrainingPair);
}

TEST_CASE("score_grid: saturated self-match zeroes, antipodal token maxes at 2") {
    // Engineered pipeline: identity projectors, zero Q/E (uniform affinity),
    // identity dictionary, constant render tokens.
    const int d = 4;
    calib::CalibrationModel model = calib::CalibrationModel::init(d, d, 35);
    model.identity_phi_r = model.identity_phi_s = true;
    model.wq.setZero();
    model.we.setZero();
    model.wd = MatrixXd::Identity(d, d);

    calib::PairTokens pair;
    pair.f_s = random_tokens(2, 2, d, 36);
    for (int p = 0; p < 4; ++p)
        for (int c = 0; c < d; ++c) pair.f_s.data(p, c) = (c == 0) ? 0.8f : 0.1f;
    pair.f_r = pair.f_s;
    for (int c = 0; c < d; ++c) pair.f_r.data(2, c) = -pair.f_s.data(2, c);  // antipodal patch
    pair.w = ones_mask(2, 2);

    const VectorXd grid = calib::score_grid(pair, model);
    CHECK(std::abs(grid(0)) < 1e-9);
    CHECK(std::abs(grid(1)) < 1e-9);
    CHECK(std::abs(grid(3)) < 1e-9);
    CHECK(grid(2) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(grid.maxCoeff() == doctest::Approx(2.0).epsilon(1e-9));

    // Values lie in [0,2]; masked cells are exactly zero.
    pair.w.bits[1] = 0;
    const VectorXd gated = calib::score_grid(pair, model);
    CHECK(gated(1) == 0.0);
    for (int i = 0; i < 4; ++i) {
        CHECK(gated(i) >= 0.0);
        CHECK(gated(i) <= 2.0 + 1e-12);
    }
}

TEST_CASE("score_map: background is exactly zero; ramp upsampling is mean-preserving") {
    const int d = 4, gh = 6, gw = 6, patch = 7;
    calib::CalibrationModel model = calib::CalibrationModel::init(d, d, 37);
    model.identity_phi_r = model.identity_phi_s = true;
    model.wq.setZero();
    model.we.setZero();
    model.wd = MatrixXd::Identity(d, d);
    calib::PairTokens pair = make_pair_tokens(gh, gw, d, 38);
    Mask full(gw * patch, gh * patch, 1);
    for (int x = 0; x < full.width; ++x) full.at(x, 0) = 0;
    const ImageF map = calib::score_map(pair, model, full);
    for (int x = 0; x < full.width; ++x) CHECK(map.at(x, 0) == 0.0f);
    for (float v : map.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 2.0f + 1e-6f);
    }

    // A linear-ramp grid box-averages back to the grid values.
    ImageF ramp(gw, gh);
    for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x) ramp.at(x, y) = float(0.2 + 1e-4 * x + 2e-4 * y);
    const ImageF up = bilinear_upsample(ramp, gw * patch, gh * patch);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            double acc = 0;
            for (int y = gy * patch; y < (gy + 1) * patch; ++y)
                for (int x = gx * patch; x < (gx + 1) * patch; ++x) acc += up.at(x, y);
            acc /= double(patch) * patch;
            CHECK(acc == doctest::Approx(double(ramp.at(gx, gy))).epsilon(1e-3));
        }
}

TEST_CASE("image_score: top-K pooling") {
    ImageF zeros(40, 40, 0.0f);
    CHECK(calib::image_score(zeros, 800) == 0.0);

    ImageF hot(40, 40, 0.0f);
    hot.at(13, 7) = 0.9f;
    CHECK(calib::image_score(hot, 800) == doctest::Approx(0.9).epsilon(1e-6));  // K = 1

    // K from 0.1% of the foreground; compare against a full sort.
    ImageF map(100, 100);
    Rng rng(39);
    for (auto& v : map.data) v = float(rng.uniform());
    const size_t fg = 8000;  // K = 8
    std::vector<float> sorted(map.data);
    std::sort(sorted.begin(), sorted.end(), std::greater<float>());
    double want = 0;
    for (int i = 0; i < 8; ++i) want += sorted[size_t(i)];
    want /= 8.0;
    CHECK(calib::image_score(map, fg) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("score is invariant to a joint permutation of the dictionary") {
    const auto pair = make_pair_tokens(3, 3, 6, 40);
    const auto model = calib::CalibrationModel::init(6, 8, 41);
    const VectorXd base = calib::score_grid(pair, model);

    calib::PairTokens permuted = pair;
    std::vector<int> perm{4, 7, 0, 2, 8, 1, 6, 3, 5};
    for (int r = 0; r < 9; ++r) permuted.f_s.data.row(r) = pair.f_s.data.row(perm[size_t(r)]);
    const VectorXd swapped = calib::score_grid(permuted, model);
    for (int i = 0; i < 9; ++i) CHECK(swapped(i) == doctest::Approx(base(i)).epsilon(1e-9));
}

TEST_CASE("checkpoint round-trip and checksum guard") {
    const auto model = calib::CalibrationModel::init(10, 32, 42);
    const auto path = std::filesystem::temp_directory_path() / "ts_model.calm";
    calib::save_model(path.string(), model);
    const auto loaded = calib::load_model(path.string());
    CHECK(loaded.d == model.d);
    CHECK(loaded.dim_in == model.dim_in);
    CHECK(loaded.wq == model.wq);
    CHECK(loaded.phi_r.w1 == model.phi_r.w1);
    CHECK(loaded.phi_s.b2 == model.phi_s.b2);

    // Corrupt one payload byte.
    {
        std::fstream io(path, std::ios::binary | std::ios::in | std::ios::out);
        io.seekp(64);
        char b = 0x11;
        io.write(&b, 1);
    }
    CHECK_THROWS_AS(calib::load_model(path.string()), calib::ChecksumMismatch);
}
