#include "twinspect/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace twinspect::calib {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Norms below this are the "dead token" case: cosine 0, gradient 0.
constexpr double kZeroNorm2 = 1e-240;

MatrixXd to_double(const Eigen::MatrixXf& m) { return m.cast<double>(); }

MatrixXd project_dense(const MatrixXd& f, const MlpWeights& w) {
    MatrixXd h = ((f * w.w1).rowwise() + w.b1.transpose()).cwiseMax(0.0);
    return (h * w.w2).rowwise() + w.b2.transpose();
}

MatrixXd project_identity(const MatrixXd& f, int d) {
    MatrixXd z = MatrixXd::Zero(f.rows(), d);
    const int copy = std::min<int>(int(f.cols()), d);
    z.leftCols(copy) = f.leftCols(copy);
    return z;
}

MatrixXd project_path(const MatrixXd& f, const CalibrationModel& model, bool real_side) {
    const bool identity = real_side ? model.identity_phi_r : model.identity_phi_s;
    if (identity) return project_identity(f, model.d);
    return project_dense(f, real_side ? model.phi_r : model.phi_s);
}

void check_input(const feat::PatchTokens& f, const CalibrationModel& model) {
    if (f.dim != model.dim_in)
        throw ShapeMismatch("token dim " + std::to_string(f.dim) + " != model dim_in " +
                            std::to_string(model.dim_in));
    if (f.count() <= 0) throw ShapeMismatch("empty token grid");
}

feat::PatchTokens wrap_tokens(const MatrixXd& z, int grid_h, int grid_w) {
    feat::PatchTokens out;
    out.grid_h = grid_h;
    out.grid_w = grid_w;
    out.dim = int(z.cols());
    out.data = z.cast<float>();
    return out;
}

// Stable row softmax in place.
void row_softmax(MatrixXd& logits) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        const double mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
    }
}

double cosine(const VectorXd& u, const VectorXd& v) {
    const double nu2 = u.squaredNorm(), nv2 = v.squaredNorm();
    if (nu2 < kZeroNorm2 || nv2 < kZeroNorm2) return 0.0;
    return u.dot(v) / std::sqrt(nu2 * nv2);
}

// d(1 - cos(u, v))/du; zero when either vector is dead.
void cos_grad(const VectorXd& u, const VectorXd& v, VectorXd& du, VectorXd& dv) {
    const double nu2 = u.squaredNorm(), nv2 = v.squaredNorm();
    du.setZero(u.size());
    dv.setZero(v.size());
    if (nu2 < kZeroNorm2 || nv2 < kZeroNorm2) return;
    const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
    const double c = u.dot(v) / (nu * nv);
    du = c * u / nu2 - v / (nu * nv);
    dv = c * v / nv2 - u / (nu * nv);
}

struct Forward {
    MatrixXd fr, fs;      // inputs, N x dim_in
    MatrixXd hr, hs;      // post-ramp hidden, N x d (unused for identity)
    MatrixXd zr, zs;      // embeddings, N x d
    MatrixXd qr, es, ds;  // query/key/dictionary, N x d
    MatrixXd m;           // row-stochastic affinity, N x N
    MatrixXd zhat;        // reassembled twin, N x d
};

Forward run_forward(const MatrixXd& fr, const MatrixXd& fs, const CalibrationModel& model) {
    Forward fw;
    fw.fr = fr;
    fw.fs = fs;
    if (model.identity_phi_r) {
        fw.zr = project_identity(fr, model.d);
    } else {
        fw.hr = ((fr * model.phi_r.w1).rowwise() + model.phi_r.b1.transpose()).cwiseMax(0.0);
        fw.zr = (fw.hr * model.phi_r.w2).rowwise() + model.phi_r.b2.transpose();
    }
    if (model.identity_phi_s) {
        fw.zs = project_identity(fs, model.d);
    } else {
        fw.hs = ((fs * model.phi_s.w1).rowwise() + model.phi_s.b1.transpose()).cwiseMax(0.0);
        fw.zs = (fw.hs * model.phi_s.w2).rowwise() + model.phi_s.b2.transpose();
    }
    fw.qr.noalias() = fw.zr * model.wq;
    fw.es.noalias() = fw.zs * model.we;
    fw.ds.noalias() = fw.zs * model.wd;
    fw.m.noalias() = fw.qr * fw.es.transpose();
    fw.m *= model.scale();
    row_softmax(fw.m);
    fw.zhat.noalias() = fw.m * fw.ds;
    return fw;
}

VectorXd mask_weights(const feat::PatchMask& w) {
    VectorXd out(w.bits.size());
    for (size_t i = 0; i < w.bits.size(); ++i) out[Eigen::Index(i)] = w.bits[i] ? 1.0 : 0.0;
    return out;
}

}  // namespace

CalibrationModel CalibrationModel::init(int dim_in, int d, uint64_t seed) {
    if (dim_in <= 0 || d <= 0) throw ShapeMismatch("dims must be positive");
    CalibrationModel m;
    m.dim_in = dim_in;
    m.d = d;
    Rng rng(seed);
    auto xavier = [&](int rows, int cols) {
        const double bound = std::sqrt(6.0 / double(rows + cols));
        MatrixXd w(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) w(i, j) = rng.uniform(-bound, bound);
        return w;
    };
    auto init_mlp = [&](MlpWeights& w) {
        w.w1 = xavier(dim_in, d);
        w.b1 = VectorXd::Zero(d);
        w.w2 = xavier(d, d);
        w.b2 = VectorXd::Zero(d);
    };
    init_mlp(m.phi_r);
    init_mlp(m.phi_s);
    m.wq = xavier(d, d);
    m.we = xavier(d, d);
    m.wd = xavier(d, d);
    return m;
}

ModelGrads ModelGrads::zeros(const CalibrationModel& model) {
    ModelGrads g;
    auto zero_mlp = [&](MlpWeights& w) {
        w.w1 = MatrixXd::Zero(model.dim_in, model.d);
        w.b1 = VectorXd::Zero(model.d);
        w.w2 = MatrixXd::Zero(model.d, model.d);
        w.b2 = VectorXd::Zero(model.d);
    };
    zero_mlp(g.phi_r);
    zero_mlp(g.phi_s);
    g.wq = MatrixXd::Zero(model.d, model.d);
    g.we = MatrixXd::Zero(model.d, model.d);
    g.wd = MatrixXd::Zero(model.d, model.d);
    return g;
}

feat::PatchTokens project_real(const feat::PatchTokens& f_r, const CalibrationModel& model) {
    check_input(f_r, model);
    return wrap_tokens(project_path(to_double(f_r.data), model, true), f_r.grid_h, f_r.grid_w);
}

feat::PatchTokens project_render(const feat::PatchTokens& f_s, const CalibrationModel& model) {
    check_input(f_s, model);
    return wrap_tokens(project_path(to_double(f_s.data), model, false), f_s.grid_h, f_s.grid_w);
}

Eigen::MatrixXd affinity(const feat::PatchTokens& z_r, const feat::PatchTokens& z_s,
                         const CalibrationModel& model) {
    if (z_r.dim != model.d || z_s.dim != model.d)
        throw ShapeMismatch("affinity expects embedded tokens of width d");
    if (z_r.count() != z_s.count()) throw ShapeMismatch("affinity needs equal token counts");
    MatrixXd logits =
        (to_double(z_r.data) * model.wq) * (to_double(z_s.data) * model.we).transpose();
    logits *= model.scale();
    row_softmax(logits);
    return logits;
}

feat::PatchTokens reassemble(const Eigen::MatrixXd& m, const feat::PatchTokens& z_s,
                             const CalibrationModel& model) {
    if (z_s.dim != model.d) throw ShapeMismatch("reassemble expects embedded tokens of width d");
    if (m.rows() != m.cols() || m.rows() != z_s.count())
        throw ShapeMismatch("affinity matrix must be N x N for N tokens");
    const MatrixXd zhat = m * (to_double(z_s.data) * model.wd);
    return wrap_tokens(zhat, z_s.grid_h, z_s.grid_w);
}

double local_loss(const feat::PatchTokens& z_r, const feat::PatchTokens& z_hat_s,
                  const feat::PatchMask& w) {
    if (z_r.count() != z_hat_s.count() || z_r.dim != z_hat_s.dim)
        throw ShapeMismatch("local_loss: token grids differ");
    if (int(w.bits.size()) != z_r.count()) throw ShapeMismatch("local_loss: mask grid differs");
    const MatrixXd a = to_double(z_r.data);
    const MatrixXd b = to_double(z_hat_s.data);
    double acc = 0, wsum = 0;
    for (int p = 0; p < z_r.count(); ++p) {
        if (!w.bits[size_t(p)]) continue;
        acc += 1.0 - cosine(a.row(p).transpose(), b.row(p).transpose());
        wsum += 1.0;
    }
    if (wsum == 0) throw EmptyForegroundMask("local_loss: foreground mask is empty");
    return acc / wsum;
}

double global_loss(const feat::PatchTokens& z_hat_s, const feat::PatchTokens& z_s) {
    if (z_hat_s.count() != z_s.count() || z_hat_s.dim != z_s.dim)
        throw ShapeMismatch("global_loss: token grids differ");
    if (z_s.count() == 0) throw ShapeMismatch("global_loss: empty grids");
    const VectorXd gh = to_double(z_hat_s.data).colwise().mean().transpose();
    const VectorXd gs = to_double(z_s.data).colwise().mean().transpose();
    return 1.0 - cosine(gh, gs);
}

ForwardBackward forward_backward(const PairTokens& pair, const CalibrationModel& model,
                                 double lambda_local, double lambda_global) {
    check_input(pair.f_r, model);
    check_input(pair.f_s, model);
    if (pair.f_r.count() != pair.f_s.count())
        throw ShapeMismatch("pair token grids differ in size");
    if (int(pair.w.bits.size()) != pair.f_r.count())
        throw ShapeMismatch("patch mask does not match the token grid");

    const Eigen::Index n = pair.f_r.count();
    const Eigen::Index d = model.d;
    Forward fw = run_forward(to_double(pair.f_r.data), to_double(pair.f_s.data), model);
    const VectorXd w = mask_weights(pair.w);
    const double wsum = w.sum();
    if (wsum == 0) throw EmptyForegroundMask("forward_backward: foreground mask is empty");

    ForwardBackward out;
    out.grads = ModelGrads::zeros(model);

    // Local loss and its direct gradients on Z_r and Zhat.
    MatrixXd d_zhat = MatrixXd::Zero(n, d);
    MatrixXd d_zr = MatrixXd::Zero(n, d);
    MatrixXd d_zs = MatrixXd::Zero(n, d);
    double local = 0;
    {
        VectorXd du(d), dv(d);
        for (Eigen::Index p = 0; p < n; ++p) {
            if (w[p] == 0.0) continue;
            const VectorXd u = fw.zr.row(p).transpose();
            const VectorXd v = fw.zhat.row(p).transpose();
            local += 1.0 - cosine(u, v);
            cos_grad(u, v, du, dv);
            const double coeff = lambda_local / wsum;
            d_zr.row(p) += coeff * du.transpose();
            d_zhat.row(p) += coeff * dv.transpose();
        }
        local /= wsum;
    }

    // Global loss through the two pooled means.
    double global = 0;
    {
        const VectorXd gh = fw.zhat.colwise().mean().transpose();
        const VectorXd gs = fw.zs.colwise().mean().transpose();
        global = 1.0 - cosine(gh, gs);
        VectorXd dgh(d), dgs(d);
        cos_grad(gh, gs, dgh, dgs);
        d_zhat.rowwise() += (lambda_global / double(n)) * dgh.transpose();
        d_zs.rowwise() += (lambda_global / double(n)) * dgs.transpose();
    }

    out.local = local;
    out.global = global;
    out.total = lambda_local * local + lambda_global * global;

    // Attention backward: Zhat = M Ds.
    MatrixXd d_ds(n, d);
    d_ds.noalias() = fw.m.transpose() * d_zhat;
    MatrixXd d_m(n, n);
    d_m.noalias() = d_zhat * fw.ds.transpose();
    // Softmax rows: dL = M o (dM - <dM, M>_row), then the 1/sqrt(d) scale.
    for (Eigen::Index i = 0; i < n; ++i) {
        const double dot = d_m.row(i).dot(fw.m.row(i));
        d_m.row(i) = (fw.m.row(i).array() * (d_m.row(i).array() - dot)).matrix();
    }
    d_m *= model.scale();

    MatrixXd d_qr(n, d), d_es(n, d);
    d_qr.noalias() = d_m * fw.es;
    d_es.noalias() = d_m.transpose() * fw.qr;

    out.grads.wq.noalias() = fw.zr.transpose() * d_qr;
    d_zr.noalias() += d_qr * model.wq.transpose();
    out.grads.we.noalias() = fw.zs.transpose() * d_es;
    d_zs.noalias() += d_es * model.we.transpose();
    out.grads.wd.noalias() = fw.zs.transpose() * d_ds;
    d_zs.noalias() += d_ds * model.wd.transpose();

    auto mlp_backward = [](const MatrixXd& f, const MatrixXd& h, const MlpWeights& wts,
                           const MatrixXd& dz, MlpWeights& g) {
        g.w2.noalias() = h.transpose() * dz;
        g.b2 = dz.colwise().sum().transpose();
        MatrixXd dh = dz * wts.w2.transpose();
        // Ramp subgradient at 0 is 0.
        dh = (h.array() > 0.0).select(dh, 0.0);
        g.w1.noalias() = f.transpose() * dh;
        g.b1 = dh.colwise().sum().transpose();
    };
    if (!model.identity_phi_r) mlp_backward(fw.fr, fw.hr, model.phi_r, d_zr, out.grads.phi_r);
    if (!model.identity_phi_s) mlp_backward(fw.fs, fw.hs, model.phi_s, d_zs, out.grads.phi_s);
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

// Applies fn to every trainable tensor triple (weight, grad, slot).
template <typename Fn>
void for_each_tensor(CalibrationModel& model, ModelGrads& a, ModelGrads& b, ModelGrads& c, Fn&& fn) {
    auto visit_mlp = [&](MlpWeights& w, MlpWeights& ga, MlpWeights& gb, MlpWeights& gc) {
        fn(w.w1, ga.w1, gb.w1, gc.w1);
        fn(w.b1, ga.b1, gb.b1, gc.b1);
        fn(w.w2, ga.w2, gb.w2, gc.w2);
        fn(w.b2, ga.b2, gb.b2, gc.b2);
    };
    if (!model.identity_phi_r) visit_mlp(model.phi_r, a.phi_r, b.phi_r, c.phi_r);
    if (!model.identity_phi_s) visit_mlp(model.phi_s, a.phi_s, b.phi_s, c.phi_s);
    fn(model.wq, a.wq, b.wq, c.wq);
    fn(model.we, a.we, b.we, c.we);
    fn(model.wd, a.wd, b.wd, c.wd);
}

void accumulate(ModelGrads& into, const ModelGrads& from, double scale) {
    auto add_mlp = [&](MlpWeights& a, const MlpWeights& b) {
        a.w1 += scale * b.w1;
        a.b1 += scale * b.b1;
        a.w2 += scale * b.w2;
        a.b2 += scale * b.b2;
    };
    add_mlp(into.phi_r, from.phi_r);
    add_mlp(into.phi_s, from.phi_s);
    into.wq += scale * from.wq;
    into.we += scale * from.we;
    into.wd += scale * from.wd;
}

}  // namespace

TrainResult train(const std::vector<PairTokens>& pairs, const CalibrationModel& init,
                  const TrainConfig& cfg) {
    if (pairs.empty()) throw ShapeMismatch("train: no pairs");
    if (cfg.epochs <= 0 || cfg.batch <= 0 || !(cfg.lr > 0))
        throw ShapeMismatch("train: invalid config");
    for (const auto& p : pairs)
        if (p.anomalous)
            throw AnomalousTrainingPair("train split must contain only normal pairs (" + p.id + ")");

    TrainResult result;
    result.model = init;
    ModelGrads m_state = ModelGrads::zeros(init);
    ModelGrads v_state = ModelGrads::zeros(init);
    long step = 0;

    std::vector<size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5E5D + uint64_t(epoch)));
        shuffle_rng.shuffle(order);

        double ep_local = 0, ep_global = 0, ep_total = 0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch)) {
            const size_t count = std::min(size_t(cfg.batch), order.size() - start);
            std::vector<ForwardBackward> results(count);
            parallel_for(count, [&](size_t i) {
                results[i] = forward_backward(pairs[order[start + i]], result.model,
                                              cfg.lambda_local, cfg.lambda_global);
            });
            // Fixed pairwise-tree reduction keeps the sum order-independent
            // of thread scheduling.
            std::vector<ModelGrads*> layer;
            for (auto& r : results) layer.push_back(&r.grads);
            while (layer.size() > 1) {
                std::vector<ModelGrads*> next;
                for (size_t i = 0; i + 1 < layer.size(); i += 2) {
                    accumulate(*layer[i], *layer[i + 1], 1.0);
                    next.push_back(layer[i]);
                }
                if (layer.size() % 2 == 1) next.push_back(layer.back());
                layer = std::move(next);
            }
            ModelGrads& batch_grads = *layer.front();
            const double inv_count = 1.0 / double(count);

            ++step;
            const double bc1 = 1.0 - std::pow(cfg.beta1, double(step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, double(step));
            for_each_tensor(result.model, batch_grads, m_state, v_state,
                            [&](auto& w, auto& g, auto& m, auto& v) {
                                auto garr = (g.array() * inv_count).eval();
                                m.array() = cfg.beta1 * m.array() + (1.0 - cfg.beta1) * garr;
                                v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * garr.square();
                                auto mhat = m.array() / bc1;
                                auto vhat = v.array() / bc2;
                                w.array() -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) +
                                                       cfg.weight_decay * w.array());
                            });
            for (const auto& r : results) {
                ep_local += r.local;
                ep_global += r.global;
                ep_total += r.total;
            }
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.local = ep_local / double(pairs.size());
        stats.global = ep_global / double(pairs.size());
        stats.total = ep_total / double(pairs.size());
        result.history.push_back(stats);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

Eigen::VectorXd score_grid(const PairTokens& pair, const CalibrationModel& model) {
    check_input(pair.f_r, model);
    check_input(pair.f_s, model);
    if (pair.f_r.count() != pair.f_s.count()) throw ShapeMismatch("pair token grids differ");
    if (int(pair.w.bits.size()) != pair.f_r.count())
        throw ShapeMismatch("patch mask does not match the token grid");
    const Forward fw = run_forward(to_double(pair.f_r.data), to_double(pair.f_s.data), model);
    VectorXd grid(pair.f_r.count());
    for (Eigen::Index p = 0; p < grid.size(); ++p) {
        if (!pair.w.bits[size_t(p)]) {
            grid[p] = 0.0;
            continue;
        }
        grid[p] = 1.0 - cosine(fw.zr.row(p).transpose(), fw.zhat.row(p).transpose());
    }
    return grid;
}

ImageF score_map(const PairTokens& pair, const CalibrationModel& model, const Mask& full_mask) {
    const VectorXd grid = score_grid(pair, model);
    ImageF grid_img(pair.f_r.grid_w, pair.f_r.grid_h);
    for (int i = 0; i < pair.f_r.count(); ++i) grid_img.data[size_t(i)] = float(grid[i]);
    ImageF up = bilinear_upsample(grid_img, full_mask.width, full_mask.height);
    for (size_t i = 0; i < up.size(); ++i)
        if (!full_mask.data[i]) up.data[i] = 0.0f;
    return up;
}

double image_score(const ImageF& map, size_t foreground_px) {
    const size_t k = std::max<size_t>(1, size_t(0.001 * double(foreground_px)));
    std::vector<float> values(map.data);
    const size_t kk = std::min(k, values.size());
    std::nth_element(values.begin(), values.begin() + long(kk - 1), values.end(),
                     std::greater<float>());
    double acc = 0;
    for (size_t i = 0; i < kk; ++i) acc += values[i];
    return acc / double(kk);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

void blob_write(std::ostream& os, uint64_t& hash, const MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            uint64_t u;
            std::memcpy(&u, &v, 8);
            unsigned char b[8];
            for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(u >> (8 * k));
            hash = fnv1a(b, 8, hash);
            os.write(reinterpret_cast<const char*>(b), 8);
        }
}

void blob_read(std::istream& is, uint64_t& hash, MatrixXd& m, const std::string& path) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            unsigned char b[8];
            if (!is.read(reinterpret_cast<char*>(b), 8))
                throw FormatError("truncated weight blob: " + path);
            hash = fnv1a(b, 8, hash);
            uint64_t u = 0;
            for (int k = 7; k >= 0; --k) u = (u << 8) | b[k];
            double v;
            std::memcpy(&v, &u, 8);
            m(i, j) = v;
        }
}

template <typename Fn>
void for_each_blob(CalibrationModel& model, Fn&& fn) {
    for (MlpWeights* w : {&model.phi_r, &model.phi_s}) {
        fn(w->w1);
        MatrixXd b1 = w->b1;  // vectors serialized through a matrix view
        fn(b1);
        w->b1 = b1;
        fn(w->w2);
        MatrixXd b2 = w->b2;
        fn(b2);
        w->b2 = b2;
    }
    fn(model.wq);
    fn(model.we);
    fn(model.wd);
}

}  // namespace

void save_model(const std::string& path, const CalibrationModel& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for write: " + path);
    os.write("CALM", 4);
    write_le_u32(os, 1);
    write_le_u32(os, uint32_t(model.d));
    write_le_u32(os, uint32_t(model.dim_in));
    const uint32_t flags =
        (model.identity_phi_r ? 1u : 0u) | (model.identity_phi_s ? 2u : 0u);
    write_le_u32(os, flags);
    uint64_t hash = kFnvOffset;
    CalibrationModel copy = model;
    for_each_blob(copy, [&](MatrixXd& m) { blob_write(os, hash, m); });
    write_le_u64(os, hash);
    if (!os) throw FormatError("write failed: " + path);
}

CalibrationModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CALM", 4) != 0)
        throw FormatError("bad magic: " + path);
    uint32_t version, d, dim_in, flags;
    if (!read_le_u32(is, version) || version != 1)
        throw FormatError("unsupported version: " + path);
    if (!read_le_u32(is, d) || !read_le_u32(is, dim_in) || !read_le_u32(is, flags))
        throw FormatError("truncated header: " + path);
    if (d == 0 || dim_in == 0 || d > 65536 || dim_in > 65536)
        throw FormatError("implausible dimensions: " + path);
    CalibrationModel model;
    model.d = int(d);
    model.dim_in = int(dim_in);
    model.identity_phi_r = (flags & 1u) != 0;
    model.identity_phi_s = (flags & 2u) != 0;
    auto size_mlp = [&](MlpWeights& w) {
        w.w1.resize(model.dim_in, model.d);
        w.b1.resize(model.d);
        w.w2.resize(model.d, model.d);
        w.b2.resize(model.d);
    };
    size_mlp(model.phi_r);
    size_mlp(model.phi_s);
    model.wq.resize(model.d, model.d);
    model.we.resize(model.d, model.d);
    model.wd.resize(model.d, model.d);
    uint64_t hash = kFnvOffset;
    for_each_blob(model, [&](MatrixXd& m) { blob_read(is, hash, m, path); });
    uint64_t stored;
    if (!read_le_u64(is, stored)) throw FormatError("truncated checksum: " + path);
    if (stored != hash) throw ChecksumMismatch("weight checksum mismatch: " + path);
    return model;
}

void save_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path);
    os << "epoch,L_local,L_global,L_total\n";
    os << std::setprecision(17);
    for (const auto& h : history)
        os << h.epoch << "," << h.local << "," << h.global << "," << h.total << "\n";
}

}  // namespace twinspect::calib
