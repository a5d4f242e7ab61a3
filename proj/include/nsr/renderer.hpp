#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/field.hpp"
#include "nsr/geometry.hpp"
#include "nsr/random.hpp"

namespace nsr {

constexpr int kCoarseSamples = 64;
constexpr int kFineSamples = 64;
constexpr double kDivEps = 1e-6;

inline double phi_s(double x, double s) { return 1.0 / (1.0 + std::exp(-s * x)); }

// Eq-style unbiased opacity from two consecutive sdf samples.
inline double alpha_from_sdf(double sdf_i, double sdf_next, double s) {
    double num = phi_s(sdf_i, s);
    if (num < 1e-12) return 0.0;
    return std::max((num - phi_s(sdf_next, s)) / num, 0.0);
}

using SdfFn = std::function<double(const Vec3&)>;

inline std::vector<double> stratified_depths(const Ray& ray, int n, Rng& rng) {
    std::vector<double> t(n);
    double span = ray.t_far - ray.t_near;
    for (int i = 0; i < n; ++i)
        t[i] = ray.t_near + span * (double(i) + rng.uniform()) / double(n);
    return t;
}

// 64 stratified coarse depths plus 64 fine depths drawn by inverse-CDF
// importance sampling from the coarse alpha-weight distribution; merged and
// sorted. Deterministic given the seed.
inline std::vector<double> fine_from_coarse(const Ray& ray, const std::vector<double>& coarse,
                                            const std::vector<double>& sdfs, double s,
                                            uint64_t seed, Rng& rng) {
    std::vector<double> w(kCoarseSamples - 1);
    double T = 1.0, total = 0.0;
    for (int i = 0; i + 1 < kCoarseSamples; ++i) {
        double a = alpha_from_sdf(sdfs[i], sdfs[i + 1], s);
        w[i] = T * a;
        T *= (1.0 - a);
        total += w[i];
    }

    std::vector<double> fine(kFineSamples);
    if (total < 1e-12) {
        Rng rng2(Rng::derive(seed, 1));
        fine = stratified_depths(ray, kFineSamples, rng2);
    } else {
        std::vector<double> cdf(w.size() + 1, 0.0);
        for (std::size_t i = 0; i < w.size(); ++i) cdf[i + 1] = cdf[i] + w[i] / total;
        cdf.back() = 1.0;
        for (int j = 0; j < kFineSamples; ++j) {
            double u = (double(j) + rng.uniform()) / double(kFineSamples);
            auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
            std::size_t bin = std::min<std::size_t>(w.size() - 1, std::size_t(it - cdf.begin()) - 1);
            double seg = cdf[bin + 1] - cdf[bin];
            double frac = seg > 1e-15 ? (u - cdf[bin]) / seg : 0.5;
            fine[j] = coarse[bin] + frac * (coarse[bin + 1] - coarse[bin]);
        }
    }
    std::vector<double> all;
    all.reserve(kCoarseSamples + kFineSamples);
    all.insert(all.end(), coarse.begin(), coarse.end());
    all.insert(all.end(), fine.begin(), fine.end());
    std::sort(all.begin(), all.end());
    return all;
}

inline std::vector<double> sample_ray_with(const Ray& ray, const SdfFn& sdf, double s,
                                           uint64_t seed) {
    Rng rng(seed);
    std::vector<double> coarse = stratified_depths(ray, kCoarseSamples, rng);
    std::vector<double> sdfs(kCoarseSamples);
    for (int i = 0; i < kCoarseSamples; ++i) sdfs[i] = sdf(ray.at(coarse[i]));
    return fine_from_coarse(ray, coarse, sdfs, s, seed, rng);
}

// Same sampler with the coarse sdf evaluations done as one batched pass.
inline std::vector<double> sample_ray(const Ray& ray, const FieldParams& params, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> coarse = stratified_depths(ray, kCoarseSamples, rng);
    MatX pts(3, kCoarseSamples);
    for (int i = 0; i < kCoarseSamples; ++i) pts.col(i) = ray.at(coarse[i]);
    GeoTrace tr = geo_forward(params, pts, false);
    std::vector<double> sdfs(kCoarseSamples);
    for (int i = 0; i < kCoarseSamples; ++i) sdfs[i] = tr.out(0, i);
    return fine_from_coarse(ray, coarse, sdfs, params.s(), seed, rng);
}

struct Crossing {
    int index;   // first i with sdf_i * sdf_{i+1} < 0
    double t;    // linearly interpolated zero depth
};

// First sign change along the ray; the interpolation is the differentiable
// surface depth, with gradients flowing into both sdf values.
inline std::optional<Crossing> locate_zero_crossing(const std::vector<double>& depths,
                                                    const std::vector<double>& sdfs) {
    for (std::size_t i = 0; i + 1 < depths.size(); ++i) {
        if (sdfs[i] * sdfs[i + 1] < 0.0) {
            double t = (sdfs[i] * depths[i + 1] - sdfs[i + 1] * depths[i]) /
                       (sdfs[i] - sdfs[i + 1]);
            return Crossing{int(i), t};
        }
    }
    return std::nullopt;
}

// d t* / d sdf_i and d t* / d sdf_{i+1} for the interpolation above.
inline std::pair<double, double> zero_crossing_grad(double t_i, double t_next, double sdf_i,
                                                    double sdf_next) {
    double den = sdf_i - sdf_next;
    double tstar = (sdf_i * t_next - sdf_next * t_i) / den;
    return {(t_next - tstar) / den, (tstar - t_i) / den};
}

struct RenderBatch {
    std::vector<double> depths;
    std::vector<double> sdfs;
    std::vector<double> alphas;         // size depths-1
    std::vector<double> transmittance;  // T_i, size depths-1
    Vec3 color = Vec3::Zero();
    double weight_sum = 0.0;
    double rendered_depth = 0.0;
    std::optional<Crossing> crossing;
    Vec3 surface_point = Vec3::Zero();
};

// Alpha-composites the given per-sample colors; colors may be empty when only
// geometry is needed.
inline void composite(RenderBatch& b, const std::vector<Vec3>& colors, double s) {
    const std::size_t n = b.depths.size();
    b.alphas.assign(n - 1, 0.0);
    b.transmittance.assign(n - 1, 0.0);
    double T = 1.0;
    b.color.setZero();
    b.weight_sum = 0.0;
    double depth_acc = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        double a = alpha_from_sdf(b.sdfs[i], b.sdfs[i + 1], s);
        b.alphas[i] = a;
        b.transmittance[i] = T;
        double w = T * a;
        b.weight_sum += w;
        depth_acc += w * b.depths[i];
        if (!colors.empty()) b.color += w * colors[i];
        T *= (1.0 - a);
    }
    b.rendered_depth = depth_acc / std::max(b.weight_sum, kDivEps);
}

// Geometry-only render against an arbitrary sdf (tests use analytic fields).
inline RenderBatch render_geometry(const Ray& ray, const SdfFn& sdf, double s, uint64_t seed) {
    RenderBatch b;
    b.depths = sample_ray_with(ray, sdf, s, seed);
    b.sdfs.resize(b.depths.size());
    for (std::size_t i = 0; i < b.depths.size(); ++i) b.sdfs[i] = sdf(ray.at(b.depths[i]));
    composite(b, {}, s);
    b.crossing = locate_zero_crossing(b.depths, b.sdfs);
    if (b.crossing) b.surface_point = ray.at(b.crossing->t);
    return b;
}

// Full render through the field. Radiance is skipped for samples whose
// compositing weight falls below weight_cutoff; their color contribution is
// defined as zero.
inline RenderBatch render(const Ray& ray, const FieldParams& params, uint64_t seed,
                          double weight_cutoff = 0.0) {
    double s = params.s();
    RenderBatch b;
    b.depths = sample_ray(ray, params, seed);
    const std::size_t n = b.depths.size();
    MatX pts(3, n);
    for (std::size_t i = 0; i < n; ++i) pts.col(i) = ray.at(b.depths[i]);
    GeoTrace geo = geo_forward(params, pts, false);
    b.sdfs.resize(n);
    for (std::size_t i = 0; i < n; ++i) b.sdfs[i] = geo.out(0, i);

    composite(b, {}, s);  // first pass: weights only
    std::vector<Vec3> colors(n - 1, Vec3::Zero());
    std::vector<int> active;
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (b.transmittance[i] * b.alphas[i] > weight_cutoff) active.push_back(int(i));
    if (!active.empty()) {
        MatX ap(3, active.size()), ad(3, active.size());
        for (std::size_t k = 0; k < active.size(); ++k) {
            ap.col(k) = pts.col(active[k]);
            ad.col(k) = ray.v;
        }
        GeoTrace g2 = geo_forward(params, ap, true);
        MatX normals(3, active.size()), feats(params.cfg.geo_feat, active.size());
        for (std::size_t k = 0; k < active.size(); ++k) {
            normals.col(k) = g2.normal(int(k));
            feats.col(k) = g2.feat(int(k));
        }
        RadTrace rad = rad_forward(params, ap, ad, normals, feats);
        for (std::size_t k = 0; k < active.size(); ++k) colors[active[k]] = rad.color.col(k);
    }
    composite(b, colors, s);
    b.crossing = locate_zero_crossing(b.depths, b.sdfs);
    if (b.crossing) b.surface_point = ray.at(b.crossing->t);
    return b;
}

}  // namespace nsr
