#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/feature_map.hpp"
#include "nsr/geometry.hpp"

namespace nsr {

enum class LossKind { none, pixel_sim, patch_sim, patch_ncc, patch_ssim };

inline const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::none: return "none";
        case LossKind::pixel_sim: return "pixel-sim";
        case LossKind::patch_sim: return "patch-sim";
        case LossKind::patch_ncc: return "patch-ncc";
        case LossKind::patch_ssim: return "patch-ssim";
    }
    return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "none") return LossKind::none;
    if (s == "pixel-sim") return LossKind::pixel_sim;
    if (s == "patch-sim") return LossKind::patch_sim;
    if (s == "patch-ncc") return LossKind::patch_ncc;
    if (s == "patch-ssim") return LossKind::patch_ssim;
    throw ValidationError("unknown loss kind: " + s);
}

struct ConsistencyConfig {
    LossKind loss_kind = LossKind::patch_ncc;
    int patch_size = 11;    // P, odd
    int n_candidates = 10;  // source views sorted by relative angle
    int top_k = 4;          // views kept by best photometric score
    double c1 = 0.01;       // SSIM stabilizers
    double c2 = 0.03;
    double eps_var = 1e-6;  // NCC variance guard

    void validate() const {
        if (patch_size < 1 || patch_size % 2 == 0) throw ValidationError("patch size must be odd");
        if (top_k < 1 || top_k > n_candidates)
            throw ValidationError("top_k must be within [1, n_candidates]");
        if (c1 <= 0 || c2 <= 0) throw ValidationError("SSIM constants must be positive");
    }
};

// Patch of P^2 integer-offset positions around a reference pixel.
struct PatchSpec {
    Vec2 center;
    int size = 11;

    std::vector<Vec2> positions() const {
        int h = size / 2;
        std::vector<Vec2> ps;
        ps.reserve(std::size_t(size) * size);
        for (int dy = -h; dy <= h; ++dy)
            for (int dx = -h; dx <= h; ++dx)
                ps.emplace_back(center.x() + dx, center.y() + dy);
        return ps;
    }
};

// Cosine similarity; zero-norm inputs give 0.
inline double pixel_similarity(const VecX& fr, const VecX& fs, VecX* dsim_dfs = nullptr) {
    double nr = fr.norm(), ns = fs.norm();
    if (dsim_dfs) dsim_dfs->setZero(fs.size());
    if (nr <= 0.0 || ns <= 0.0) return 0.0;
    double sim = fr.dot(fs) / (nr * ns);
    if (dsim_dfs) *dsim_dfs = fr / (nr * ns) - (sim / (ns * ns)) * fs;
    return sim;
}

// The patch metrics take C x P^2 matrices plus a validity mask and compute
// over the valid columns. Optional output: the derivative w.r.t. the source
// patch entries (zero at invalid columns).

inline double patch_ncc(const MatX& ref, const MatX& src, const std::vector<char>& mask,
                        double eps_var, MatX* dsrc = nullptr) {
    const int C = int(ref.rows()), N = int(ref.cols());
    if (dsrc) dsrc->setZero(C, N);
    int M = 0;
    for (char m : mask) M += m ? 1 : 0;
    if (M == 0) return 0.0;
    double acc = 0.0;
    for (int c = 0; c < C; ++c) {
        double mr = 0, ms = 0;
        for (int j = 0; j < N; ++j)
            if (mask[j]) {
                mr += ref(c, j);
                ms += src(c, j);
            }
        mr /= M;
        ms /= M;
        double cov = 0, vr = 0, vs = 0;
        for (int j = 0; j < N; ++j)
            if (mask[j]) {
                double a = ref(c, j) - mr, b = src(c, j) - ms;
                cov += a * b;
                vr += a * a;
                vs += b * b;
            }
        cov /= M;
        vr /= M;
        vs /= M;
        double den = std::sqrt(vr * vs + eps_var * eps_var);
        double ncc = cov / den;
        acc += ncc;
        if (dsrc) {
            for (int j = 0; j < N; ++j)
                if (mask[j]) {
                    double a = ref(c, j) - mr, b = src(c, j) - ms;
                    (*dsrc)(c, j) = (a / (M * den) - ncc * vr * b / (M * den * den)) / C;
                }
        }
    }
    return acc / C;
}

inline double patch_ssim(const MatX& ref, const MatX& src, const std::vector<char>& mask,
                         double c1, double c2, MatX* dsrc = nullptr) {
    const int C = int(ref.rows()), N = int(ref.cols());
    if (dsrc) dsrc->setZero(C, N);
    int M = 0;
    for (char m : mask) M += m ? 1 : 0;
    if (M == 0) return 0.0;
    double acc = 0.0;
    for (int c = 0; c < C; ++c) {
        double mr = 0, ms = 0;
        for (int j = 0; j < N; ++j)
            if (mask[j]) {
                mr += ref(c, j);
                ms += src(c, j);
            }
        mr /= M;
        ms /= M;
        double cov = 0, vr = 0, vs = 0;
        for (int j = 0; j < N; ++j)
            if (mask[j]) {
                double a = ref(c, j) - mr, b = src(c, j) - ms;
                cov += a * b;
                vr += a * a;
                vs += b * b;
            }
        cov /= M;
        vr /= M;
        vs /= M;
        double A = 2 * mr * ms + c1, B = 2 * cov + c2;
        double Cd = mr * mr + ms * ms + c1, D = vr + vs + c2;
        double ssim = (A * B) / (Cd * D);
        acc += ssim;
        if (dsrc) {
            for (int j = 0; j < N; ++j)
                if (mask[j]) {
                    double a = ref(c, j) - mr, b = src(c, j) - ms;
                    double dA = 2 * mr / M;
                    double dB = 2 * a / M;
                    double dC = 2 * ms / M;
                    double dD = 2 * b / M;
                    (*dsrc)(c, j) = ((dA * B + A * dB) / (Cd * D) -
                                     ssim * (dC / Cd + dD / D)) /
                                    C;
                }
        }
    }
    return acc / C;
}

inline double patch_sim(const MatX& ref, const MatX& src, const std::vector<char>& mask,
                        MatX* dsrc = nullptr) {
    const int N = int(ref.cols());
    if (dsrc) dsrc->setZero(ref.rows(), N);
    int M = 0;
    for (char m : mask) M += m ? 1 : 0;
    if (M == 0) return 0.0;
    double acc = 0.0;
    VecX g;
    for (int j = 0; j < N; ++j) {
        if (!mask[j]) continue;
        double sim = pixel_similarity(ref.col(j), src.col(j), dsrc ? &g : nullptr);
        acc += sim;
        if (dsrc) dsrc->col(j) = g / M;
    }
    return acc / M;
}

// Warps every patch position through the homography of the patch center's
// tangent plane. Returns the source coordinates plus a validity flag per
// position (inside both images).
struct WarpedPatch {
    std::vector<Vec2> src_coords;
    std::vector<char> valid;
    int n_valid = 0;
    bool usable = false;  // false when more than half the pixels fall outside
};

inline WarpedPatch warp_patch(const Camera& ref, const Camera& src, const TangentPlane& plane,
                              const PatchSpec& patch) {
    Mat3 H = homography_unnormalized(ref, src, plane);
    auto positions = patch.positions();
    WarpedPatch out;
    out.src_coords.resize(positions.size());
    out.valid.assign(positions.size(), 0);
    int n_invalid = 0;
    for (std::size_t j = 0; j < positions.size(); ++j) {
        Vec3 y = H * Vec3(positions[j].x(), positions[j].y(), 1.0);
        if (std::abs(y.z()) < 1e-12) {
            ++n_invalid;
            continue;
        }
        Vec2 xp(y.x() / y.z(), y.y() / y.z());
        out.src_coords[j] = xp;
        if (in_image(ref, positions[j]) && in_image(src, xp) && y.z() > 0.0) {
            out.valid[j] = 1;
            ++out.n_valid;
        } else {
            ++n_invalid;
        }
    }
    out.usable = n_invalid * 2 <= int(positions.size());
    return out;
}

// Result of evaluating the occlusion-aware feature loss for one surface point.
struct FeatureLossResult {
    double loss = 0.0;
    double dloss_dd = 0.0;  // derivative w.r.t. the plane offset (world form)
    std::vector<int> candidates;
    std::vector<int> selected;
};

// Candidate views ranked by the angle between the rays from each camera
// center to the surface point; ties broken by view id.
inline std::vector<int> candidate_views(int ref_view, const std::vector<Camera>& cams,
                                        const Vec3& surface_point, int n_candidates) {
    std::vector<std::pair<double, int>> scored;
    Vec3 to_ref = (cams[ref_view].center() - surface_point).normalized();
    for (int v = 0; v < int(cams.size()); ++v) {
        if (v == ref_view) continue;
        Vec3 to_src = (cams[v].center() - surface_point).normalized();
        double cosang = std::min(1.0, std::max(-1.0, to_ref.dot(to_src)));
        scored.emplace_back(std::acos(cosang), v);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<int> out;
    for (const auto& [a, v] : scored) {
        out.push_back(v);
        if (int(out.size()) >= n_candidates) break;
    }
    return out;
}

// Selects source views and aggregates the per-view feature losses for one
// reference patch. Patch kinds keep the top_k lowest losses among the
// candidates; pixel_sim uses the top_k nearest views by angle without score
// filtering. Returns nullopt when no candidate view is usable.
inline std::optional<FeatureLossResult> select_and_aggregate(
    int ref_view, const Vec3& surface_point, const TangentPlane& plane, const PatchSpec& patch,
    const std::vector<Camera>& cams, const std::vector<FeatureMap>& maps,
    const ConsistencyConfig& cfg, bool with_grad = false) {
    cfg.validate();
    const Camera& ref_cam = cams[ref_view];
    const FeatureMap& ref_map = maps[ref_view];
    auto positions = patch.positions();
    const int N = int(positions.size());
    const int C = ref_map.channels;

    // reference-side samples (constants in the optimization)
    MatX ref_feat = MatX::Zero(C, N);
    std::vector<char> ref_valid(N, 0);
    for (int j = 0; j < N; ++j) {
        if (!in_image(ref_cam, positions[j])) continue;
        sample_feature_into(ref_map, positions[j], ref_feat.col(j));
        ref_valid[j] = 1;
    }

    FeatureLossResult result;
    result.candidates = candidate_views(ref_view, cams, surface_point, cfg.n_candidates);
    if (result.candidates.empty()) return std::nullopt;

    struct ViewEval {
        int view;
        double loss;
        double dloss_dd;
    };
    std::vector<ViewEval> evals;

    const bool pixelwise = cfg.loss_kind == LossKind::pixel_sim;
    int limit = pixelwise ? std::min<int>(cfg.top_k, int(result.candidates.size()))
                          : int(result.candidates.size());
    for (int ci = 0; ci < limit; ++ci) {
        int v = result.candidates[ci];
        const Camera& src_cam = cams[v];
        const FeatureMap& src_map = maps[v];
        Mat3 H = homography_unnormalized(ref_cam, src_cam, plane);

        WarpedPatch wp;
        wp.src_coords.resize(N);
        wp.valid.assign(N, 0);
        int n_invalid = 0;
        for (int j = 0; j < N; ++j) {
            Vec3 y = H * Vec3(positions[j].x(), positions[j].y(), 1.0);
            if (!ref_valid[j] || std::abs(y.z()) < 1e-12 || y.z() <= 0.0) {
                ++n_invalid;
                continue;
            }
            Vec2 xp(y.x() / y.z(), y.y() / y.z());
            wp.src_coords[j] = xp;
            if (in_image(src_cam, xp)) {
                wp.valid[j] = 1;
                ++wp.n_valid;
            } else {
                ++n_invalid;
            }
        }
        if (n_invalid * 2 > N) continue;
        int center = N / 2;
        if (pixelwise && !wp.valid[center]) continue;

        MatX src_feat = MatX::Zero(C, N);
        MatX dfdu = MatX::Zero(C, N), dfdv = MatX::Zero(C, N);
        VecX gu(C), gv(C);
        for (int j = 0; j < N; ++j) {
            if (!wp.valid[j]) continue;
            sample_feature_into(src_map, wp.src_coords[j], src_feat.col(j),
                                with_grad ? &gu : nullptr, with_grad ? &gv : nullptr);
            if (with_grad) {
                dfdu.col(j) = gu;
                dfdv.col(j) = gv;
            }
        }

        double sim = 0.0;
        MatX dsim;  // d sim / d src_feat
        MatX* dptr = with_grad ? &dsim : nullptr;
        switch (cfg.loss_kind) {
            case LossKind::pixel_sim: {
                VecX g;
                dsim = MatX::Zero(C, N);
                sim = pixel_similarity(ref_feat.col(center), src_feat.col(center),
                                       with_grad ? &g : nullptr);
                if (with_grad) dsim.col(center) = g;
                break;
            }
            case LossKind::patch_sim:
                sim = patch_sim(ref_feat, src_feat, wp.valid, dptr);
                break;
            case LossKind::patch_ncc:
                sim = patch_ncc(ref_feat, src_feat, wp.valid, cfg.eps_var, dptr);
                break;
            case LossKind::patch_ssim:
                sim = patch_ssim(ref_feat, src_feat, wp.valid, cfg.c1, cfg.c2, dptr);
                break;
            case LossKind::none:
                throw ValidationError("feature loss evaluated with loss kind 'none'");
        }

        ViewEval ev{v, 1.0 - sim, 0.0};
        if (with_grad) {
            // chain: d loss / d src coords -> d coords / d H -> d H / d plane.d
            Mat3 dH = homography_d_offset(ref_cam, src_cam, plane);
            double acc = 0.0;
            for (int j = 0; j < N; ++j) {
                if (!wp.valid[j]) continue;
                double a = 0.0, b = 0.0;  // d loss / d (u', v')
                for (int c = 0; c < C; ++c) {
                    a += -dsim(c, j) * dfdu(c, j);
                    b += -dsim(c, j) * dfdv(c, j);
                }
                Vec3 X(positions[j].x(), positions[j].y(), 1.0);
                Vec3 y = H * X;
                double wz = y.z();
                Vec3 top(a / wz, b / wz, -(a * y.x() + b * y.y()) / (wz * wz));
                // dloss/dH = top * X^T; contract with dH/dd
                acc += top.dot(dH * X);
            }
            ev.dloss_dd = acc;
        }
        evals.push_back(ev);
    }
    if (evals.empty()) return std::nullopt;

    if (!pixelwise) {
        std::stable_sort(evals.begin(), evals.end(),
                         [](const ViewEval& a, const ViewEval& b) { return a.loss < b.loss; });
        if (int(evals.size()) > cfg.top_k) evals.resize(cfg.top_k);
    }
    double inv = 1.0 / double(evals.size());
    for (const auto& ev : evals) {
        result.loss += ev.loss * inv;
        result.dloss_dd += ev.dloss_dd * inv;
        result.selected.push_back(ev.view);
    }
    return result;
}

}  // namespace nsr
