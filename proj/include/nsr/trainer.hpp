#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <vector>

#include "nsr/consistency.hpp"
#include "nsr/parallel.hpp"
#include "nsr/renderer.hpp"
#include "nsr/scene.hpp"

namespace nsr {

struct TrainConfig {
    double lambda1 = 0.1;  // eikonal weight
    double lambda2 = 0.5;  // feature-consistency weight
    int rays_per_batch = 512;
    int steps = 3000;
    int warmup_steps = 100;
    double lr_peak = 5e-3;
    double lr_final = 2.5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    ConsistencyConfig consistency;  // loss_kind selects the photometric term
    double weight_cutoff = 1e-4;    // radiance pruning threshold
    int eik_points = 128;
    int n_threads = 0;  // 0: default_thread_count()

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0) throw ValidationError("loss weights must be >= 0");
        if (lr_final > lr_peak) throw ValidationError("lr_final must not exceed lr_peak");
        if (warmup_steps > steps) throw ValidationError("warmup_steps must not exceed steps");
        if (rays_per_batch < 1) throw ValidationError("rays_per_batch must be positive");
        consistency.validate();
    }
};

struct StepReport {
    int step = 0;
    double l_color = 0.0;
    double l_eik = 0.0;
    double l_feat = 0.0;
    double total = 0.0;
    double lr = 0.0;
    double crossing_frac = 0.0;
    double ema_color = 0.0;
    double ema_eik = 0.0;
    double ema_feat = 0.0;
};

inline double lr_at(int step, const TrainConfig& c) {
    if (c.warmup_steps > 0 && step < c.warmup_steps)
        return c.lr_peak * double(step) / double(c.warmup_steps);
    if (c.steps <= c.warmup_steps) return c.lr_peak;
    double u = double(step - c.warmup_steps) / double(c.steps - c.warmup_steps);
    return c.lr_final + (c.lr_peak - c.lr_final) * 0.5 * (1.0 + std::cos(M_PI * u));
}

// Mean over rays of the l1 norm of the color residual.
inline double color_loss(const MatX& predicted, const MatX& target) {
    if (predicted.cols() != target.cols() || predicted.cols() == 0)
        throw ValidationError("one ground-truth color per ray required");
    return (predicted - target).cwiseAbs().sum() / double(predicted.cols());
}

inline Vec3 sample_unit_ball(Rng& rng) {
    for (;;) {
        Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        if (p.squaredNorm() <= 1.0) return p;
    }
}

// Mean of (|grad sdf| - 1)^2 over points drawn uniformly in the unit ball.
inline double eikonal_loss(const std::function<Vec3(const Vec3&)>& grad_fn, int n_points,
                           uint64_t seed) {
    if (n_points <= 0) throw ValidationError("n_points must be positive");
    Rng rng(seed);
    double acc = 0.0;
    for (int i = 0; i < n_points; ++i) {
        double d = grad_fn(sample_unit_ball(rng)).norm() - 1.0;
        acc += d * d;
    }
    return acc / double(n_points);
}

inline double eikonal_loss(const FieldParams& params, int n_points, uint64_t seed) {
    return eikonal_loss(
        [&](const Vec3& p) { return eval_geometry(params, p).normal; }, n_points, seed);
}

struct TrainerState {
    FieldParams params;
    VecX m, v;  // Adam moments
    int step = 0;
    double ema_color = 0.0, ema_eik = 0.0, ema_feat = 0.0;
    bool ema_started = false;

    static TrainerState init(const FieldConfig& fc, const TrainConfig& tc) {
        TrainerState st;
        st.params = FieldParams::geometric_init(fc, tc.seed);
        st.m = VecX::Zero(st.params.values.size());
        st.v = VecX::Zero(st.params.values.size());
        return st;
    }
};

namespace detail {

constexpr double kEmaDecay = 0.99;
constexpr std::size_t kRayChunk = 16;

struct RaySpec {
    int view, px, py;
};

// Per-chunk accumulators. grad_feat is kept apart because the feature loss is
// normalized by the number of rays that produced one, which is only known
// after the whole batch.
struct ChunkAcc {
    VecX grad_main, grad_feat;
    double l_color = 0.0, l_feat = 0.0;
    int n_cross = 0, n_feat = 0;
};

inline void process_ray(const FieldParams& params, const Scene& scene, const RaySpec& rs,
                        const TrainConfig& cfg, uint64_t ray_seed, ChunkAcc& acc) {
    const Camera& cam = scene.cameras[rs.view];
    const Vec3 gt = scene.pixel(rs.view, rs.px, rs.py);
    const double kappa = 1.0 / double(cfg.rays_per_batch);
    Ray ray;
    try {
        ray = pixel_to_ray(cam, Vec2(rs.px, rs.py));
    } catch (const RayMissesBounds&) {
        acc.l_color += (scene.background - gt).cwiseAbs().sum();
        return;
    }
    const double s = params.s();
    RenderBatch b;
    b.depths = sample_ray(ray, params, ray_seed);
    const int n = int(b.depths.size());
    MatX pts(3, n);
    for (int i = 0; i < n; ++i) pts.col(i) = ray.at(b.depths[i]);
    GeoTrace trA = geo_forward(params, pts, false);
    b.sdfs.resize(n);
    for (int i = 0; i < n; ++i) b.sdfs[i] = trA.out(0, i);

    composite(b, {}, s);
    std::vector<int> active;
    for (int i = 0; i + 1 < n; ++i)
        if (b.transmittance[i] * b.alphas[i] > cfg.weight_cutoff) active.push_back(i);

    std::vector<Vec3> colors(n - 1, Vec3::Zero());
    GeoTrace trB;
    RadTrace trRad;
    if (!active.empty()) {
        MatX ap(3, active.size()), ad(3, active.size());
        for (std::size_t k = 0; k < active.size(); ++k) {
            ap.col(k) = pts.col(active[k]);
            ad.col(k) = ray.v;
        }
        trB = geo_forward(params, ap, true);
        MatX normals(3, active.size()), feats(params.cfg.geo_feat, active.size());
        for (std::size_t k = 0; k < active.size(); ++k) {
            normals.col(k) = trB.normal(int(k));
            feats.col(k) = trB.feat(int(k));
        }
        trRad = rad_forward(params, ap, ad, normals, feats);
        for (std::size_t k = 0; k < active.size(); ++k) colors[active[k]] = trRad.color.col(k);
    }
    composite(b, colors, s);

    const Vec3 chat = b.color + (1.0 - b.weight_sum) * scene.background;
    const Vec3 resid = chat - gt;
    acc.l_color += resid.cwiseAbs().sum();
    Vec3 gsign(resid.x() > 0 ? 1.0 : (resid.x() < 0 ? -1.0 : 0.0),
               resid.y() > 0 ? 1.0 : (resid.y() < 0 ? -1.0 : 0.0),
               resid.z() > 0 ? 1.0 : (resid.z() < 0 ? -1.0 : 0.0));

    // ---- backward: compositing weights ----------------------------------
    // w_i = T_i a_i;  dL/dw_i covers both the color sum and the background
    // fill term (1 - sum w) * bg.
    std::vector<double> wbar(n - 1);
    for (int i = 0; i + 1 < n; ++i)
        wbar[i] = kappa * gsign.dot(colors[i] - scene.background);
    VecX sdf_bar = VecX::Zero(n);
    double gamma_bar = 0.0;
    double suffix = 0.0;  // sum_{j>i} wbar_j w_j
    for (int i = n - 2; i >= 0; --i) {
        double a = b.alphas[i];
        double dLda = wbar[i] * b.transmittance[i];
        if (1.0 - a > 1e-12) dLda -= suffix / (1.0 - a);
        suffix += wbar[i] * b.transmittance[i] * a;
        if (a > 0.0) {
            double pa = phi_s(b.sdfs[i], s);
            if (pa >= 1e-12) {
                double pb = phi_s(b.sdfs[i + 1], s);
                double dpa = s * pa * (1.0 - pa), dpb = s * pb * (1.0 - pb);
                sdf_bar[i] += dLda * pb * dpa / (pa * pa);
                sdf_bar[i + 1] += dLda * (-dpb / pa);
                double pa_s = b.sdfs[i] * pa * (1.0 - pa);
                double pb_s = b.sdfs[i + 1] * pb * (1.0 - pb);
                gamma_bar += dLda * (pb * pa_s - pa * pb_s) / (pa * pa) * s;
            }
        }
    }
    acc.grad_main[Eigen::Index(params.gamma_offset())] += gamma_bar;

    // ---- feature-consistency term at the zero crossing ------------------
    b.crossing = locate_zero_crossing(b.depths, b.sdfs);
    if (b.crossing) {
        ++acc.n_cross;
        if (cfg.consistency.loss_kind != LossKind::none && !scene.features.empty()) {
            Vec3 pstar = ray.at(b.crossing->t);
            Vec3 grad = eval_geometry(params, pstar).normal;  // detached
            if (grad.norm() > 1e-9) {
                Vec3 nh = grad.normalized();
                TangentPlane plane = TangentPlane::through(nh, pstar);
                PatchSpec patch{Vec2(rs.px, rs.py), cfg.consistency.patch_size};
                auto res = select_and_aggregate(rs.view, pstar, plane, patch, scene.cameras,
                                                scene.features, cfg.consistency, true);
                if (res) {
                    acc.l_feat += res->loss;
                    ++acc.n_feat;
                    // plane offset d = -n . p*(t); only t* carries gradient
                    double dL_dt = res->dloss_dd * (-nh.dot(ray.v));
                    int ci = b.crossing->index;
                    auto [dti, dtn] = zero_crossing_grad(b.depths[ci], b.depths[ci + 1],
                                                         b.sdfs[ci], b.sdfs[ci + 1]);
                    MatX fbar = MatX::Zero(trA.out.rows(), 2);
                    fbar(0, 0) = dL_dt * dti;
                    fbar(0, 1) = dL_dt * dtn;
                    geo_backward_points(params, trA, {ci, ci + 1}, fbar, acc.grad_feat,
                                        /*keep=*/true);
                }
            }
        }
    }

    // ---- geometry backward for the color term ---------------------------
    std::vector<int> nz;
    for (int i = 0; i < n; ++i)
        if (sdf_bar[i] != 0.0) nz.push_back(i);
    if (!nz.empty()) {
        MatX abar = MatX::Zero(trA.out.rows(), Eigen::Index(nz.size()));
        for (std::size_t k = 0; k < nz.size(); ++k) abar(0, Eigen::Index(k)) = sdf_bar[nz[k]];
        geo_backward_points(params, trA, nz, abar, acc.grad_main, /*keep=*/true);
    }

    if (!active.empty()) {
        MatX color_bar(3, active.size());
        for (std::size_t k = 0; k < active.size(); ++k) {
            double w = b.transmittance[active[k]] * b.alphas[active[k]];
            color_bar.col(k) = kappa * w * gsign;
        }
        MatX in_bar = rad_backward(params, trRad, color_bar, acc.grad_main);
        auto rows = rad_input_rows(params.cfg);
        MatX bbar = MatX::Zero(trB.out.rows(), trB.out.cols());
        for (std::size_t k = 0; k < active.size(); ++k) {
            for (int c = 0; c < 3; ++c)
                bbar(0, 4 * int(k) + 1 + c) = in_bar(rows.normal0 + c, int(k));
            for (int f = 0; f < params.cfg.geo_feat; ++f)
                bbar(1 + f, 4 * int(k)) = in_bar(rows.feat0 + f, int(k));
        }
        geo_backward(params, trB, bbar, acc.grad_main);
    }
}

}  // namespace detail

// One optimization step: sample rays, render, differentiate the full loss,
// apply one Adam update. Bitwise deterministic for a fixed seed and any
// worker count: rays are processed in fixed-size chunks whose partial sums
// are combined in chunk order.
inline StepReport train_step(TrainerState& state, const Scene& scene, const TrainConfig& cfg) {
    cfg.validate();
    const FieldParams& params = state.params;
    const Eigen::Index np = params.values.size();
    const int step = state.step;

    // ray selection (uniform over every pixel of every view)
    std::vector<detail::RaySpec> rays(cfg.rays_per_batch);
    {
        Rng rng(Rng::derive(cfg.seed, 0x5A11, uint64_t(step)));
        uint64_t total = 0;
        for (const auto& c : scene.cameras) total += uint64_t(c.width) * c.height;
        for (auto& rs : rays) {
            uint64_t idx = rng.uniform_index(total);
            int v = 0;
            while (idx >= uint64_t(scene.cameras[v].width) * scene.cameras[v].height)
                idx -= uint64_t(scene.cameras[v].width) * scene.cameras[v].height, ++v;
            rs.view = v;
            rs.px = int(idx % uint64_t(scene.cameras[v].width));
            rs.py = int(idx / uint64_t(scene.cameras[v].width));
        }
    }

    const std::size_t n_chunks =
        (rays.size() + detail::kRayChunk - 1) / detail::kRayChunk;
    std::vector<detail::ChunkAcc> chunks(n_chunks);
    int threads = cfg.n_threads > 0 ? cfg.n_threads : default_thread_count();
    parallel_chunks(rays.size(), detail::kRayChunk, threads,
                    [&](std::size_t ci, std::size_t begin, std::size_t end) {
                        auto& acc = chunks[ci];
                        acc.grad_main = VecX::Zero(np);
                        acc.grad_feat = VecX::Zero(np);
                        for (std::size_t r = begin; r < end; ++r) {
                            uint64_t rseed = Rng::derive(cfg.seed, 0x9A7 + uint64_t(step), r);
                            detail::process_ray(params, scene, rays[r], cfg, rseed, acc);
                        }
                    });

    VecX grad = VecX::Zero(np);
    double l_color = 0.0, l_feat_sum = 0.0;
    int n_cross = 0, n_feat = 0;
    for (auto& c : chunks) {  // fixed combination order
        grad += c.grad_main;
        l_color += c.l_color;
        l_feat_sum += c.l_feat;
        n_cross += c.n_cross;
        n_feat += c.n_feat;
    }
    l_color /= double(cfg.rays_per_batch);
    double l_feat = n_feat > 0 ? l_feat_sum / double(n_feat) : 0.0;
    if (n_feat > 0) {
        double scale = cfg.lambda2 / double(n_feat);
        for (auto& c : chunks) grad += scale * c.grad_feat;
    }

    // eikonal term: half uniform ball, half jittered ray samples
    double l_eik = 0.0;
    {
        Rng erng(Rng::derive(cfg.seed, 0xE1C0, uint64_t(step)));
        MatX epts(3, cfg.eik_points);
        for (int j = 0; j < cfg.eik_points; ++j) {
            Vec3 p;
            bool near_ray = (j % 2 == 1);
            if (near_ray) {
                const auto& rs = rays[erng.uniform_index(rays.size())];
                try {
                    Ray ray = pixel_to_ray(scene.cameras[rs.view], Vec2(rs.px, rs.py));
                    double t = erng.uniform(ray.t_near, ray.t_far);
                    p = ray.at(t) + 0.01 * Vec3(erng.normal(), erng.normal(), erng.normal());
                } catch (const RayMissesBounds&) {
                    near_ray = false;
                }
            }
            if (!near_ray) p = sample_unit_ball(erng);
            epts.col(j) = p;
        }
        GeoTrace trE = geo_forward(params, epts, true);
        MatX ebar = MatX::Zero(trE.out.rows(), trE.out.cols());
        for (int j = 0; j < cfg.eik_points; ++j) {
            Vec3 g = trE.normal(j);
            double norm = g.norm();
            double d = norm - 1.0;
            l_eik += d * d;
            if (norm > 1e-12) {
                double coef = cfg.lambda1 * 2.0 * d / (norm * double(cfg.eik_points));
                for (int c = 0; c < 3; ++c) ebar(0, 4 * j + 1 + c) = coef * g[c];
            }
        }
        l_eik /= double(cfg.eik_points);
        geo_backward(params, trE, ebar, grad);
    }

    // Adam
    double lr = lr_at(step, cfg);
    int t = step + 1;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    double bc1 = 1.0 - std::pow(cfg.beta1, t);
    double bc2 = 1.0 - std::pow(cfg.beta2, t);
    state.params.values.array() -=
        lr * (state.m.array() / bc1) /
        ((state.v.array() / bc2).sqrt() + cfg.adam_eps);

    StepReport rep;
    rep.step = step;
    rep.l_color = l_color;
    rep.l_eik = l_eik;
    rep.l_feat = l_feat;
    rep.total = l_color + cfg.lambda1 * l_eik + cfg.lambda2 * l_feat;
    rep.lr = lr;
    rep.crossing_frac = double(n_cross) / double(cfg.rays_per_batch);
    if (!state.ema_started) {
        state.ema_color = l_color;
        state.ema_eik = l_eik;
        state.ema_feat = l_feat;
        state.ema_started = true;
    } else {
        state.ema_color = detail::kEmaDecay * state.ema_color + (1 - detail::kEmaDecay) * l_color;
        state.ema_eik = detail::kEmaDecay * state.ema_eik + (1 - detail::kEmaDecay) * l_eik;
        state.ema_feat = detail::kEmaDecay * state.ema_feat + (1 - detail::kEmaDecay) * l_feat;
    }
    rep.ema_color = state.ema_color;
    rep.ema_eik = state.ema_eik;
    rep.ema_feat = state.ema_feat;
    ++state.step;
    return rep;
}

// step,L_color,L_eik,L_feat,L,lr,crossing_frac — full float64 round-trip
// precision so reruns can be compared bytewise.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path) : os_(path) {
        if (!os_) throw ParseError("cannot open metrics file for writing: " + path);
        os_ << "step,L_color,L_eik,L_feat,L,lr,crossing_frac\n";
    }
    void write(const StepReport& r) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step,
                      r.l_color, r.l_eik, r.l_feat, r.total, r.lr, r.crossing_frac);
        os_ << buf;
    }
    void flush() { os_.flush(); }

private:
    std::ofstream os_;
};

inline TrainerState train(const Scene& scene, const TrainConfig& tc, const FieldConfig& fc,
                          const std::function<void(const StepReport&)>& on_step = {}) {
    TrainerState st = TrainerState::init(fc, tc);
    for (int i = 0; i < tc.steps; ++i) {
        StepReport rep = train_step(st, scene, tc);
        if (on_step) on_step(rep);
    }
    return st;
}

}  // namespace nsr
