// nsr command-line driver: scene generation, training, mesh extraction,
// evaluation, and the warp self-check.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nsr/meshing.hpp"
#include "nsr/trainer.hpp"

namespace fs = std::filesystem;
using nsr::Vec2;
using nsr::Vec3;

static const char* kVersion = "0.1.0";

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// key=value lines, '#' comments; flags take precedence over these.
std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw nsr::ParseError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
        if (!key.empty()) kv[key] = val;
    }
    return kv;
}

void apply_config_kv(const std::map<std::string, std::string>& kv, nsr::TrainConfig& tc,
                     nsr::FieldConfig& fc) {
    for (const auto& [k, v] : kv) {
        if (k == "steps") tc.steps = std::stoi(v);
        else if (k == "warmup_steps") tc.warmup_steps = std::stoi(v);
        else if (k == "rays_per_batch") tc.rays_per_batch = std::stoi(v);
        else if (k == "lr_peak") tc.lr_peak = std::stod(v);
        else if (k == "lr_final") tc.lr_final = std::stod(v);
        else if (k == "lambda1") tc.lambda1 = std::stod(v);
        else if (k == "lambda2") tc.lambda2 = std::stod(v);
        else if (k == "seed") tc.seed = std::stoull(v);
        else if (k == "loss") tc.consistency.loss_kind = nsr::loss_kind_from_string(v);
        else if (k == "patch_size") tc.consistency.patch_size = std::stoi(v);
        else if (k == "top_k") tc.consistency.top_k = std::stoi(v);
        else if (k == "n_candidates") tc.consistency.n_candidates = std::stoi(v);
        else if (k == "weight_cutoff") tc.weight_cutoff = std::stod(v);
        else if (k == "eik_points") tc.eik_points = std::stoi(v);
        else if (k == "threads") tc.n_threads = std::stoi(v);
        else if (k == "geo_layers") fc.geo_layers = std::stoi(v);
        else if (k == "geo_hidden") fc.geo_hidden = std::stoi(v);
        else if (k == "geo_feat") fc.geo_feat = std::stoi(v);
        else if (k == "rad_layers") fc.rad_layers = std::stoi(v);
        else if (k == "rad_hidden") fc.rad_hidden = std::stoi(v);
        else if (k == "n_freq_pos") fc.n_freq_pos = std::stoi(v);
        else if (k == "n_freq_dir") fc.n_freq_dir = std::stoi(v);
        else if (k == "s_init") fc.s_init = std::stod(v);
        else throw nsr::ValidationError("unknown config key: " + k);
    }
}

void write_manifest(const std::string& dir, const nlohmann::json& config, uint64_t seed,
                    const std::vector<std::string>& outputs,
                    const std::map<std::string, double>& timings) {
    nlohmann::json m;
    m["version"] = kVersion;
    m["seed"] = seed;
    m["config"] = config;
    m["outputs"] = outputs;
    m["timings_sec"] = timings;
    std::ofstream os(dir + "/manifest.json");
    os << m.dump(2) << "\n";
}

int cmd_gen_scene(const std::string& shape_name, int views, const std::string& res, int channels,
                  int feature_scale, double feature_noise, uint64_t seed,
                  const std::string& out) {
    auto t0 = std::chrono::steady_clock::now();
    nsr::SceneGenConfig cfg;
    cfg.n_views = views;
    auto x = res.find('x');
    if (x == std::string::npos) throw nsr::ValidationError("--res must look like 64x64");
    cfg.width = std::stoi(res.substr(0, x));
    cfg.height = std::stoi(res.substr(x + 1));
    cfg.channels = channels;
    if (feature_scale != 1 && feature_scale != 2 && feature_scale != 4 && feature_scale != 8)
        throw nsr::ValidationError("--feature-scale must be 1, 2, 4 or 8");
    cfg.feature_scale = feature_scale;
    cfg.feature_noise = feature_noise;
    cfg.seed = seed;
    nsr::generate_scene(nsr::ShapeSpec::named(shape_name), cfg, out);
    nlohmann::json snap{{"shape", shape_name}, {"views", views},  {"res", res},
                        {"channels", channels}, {"feature_scale", feature_scale},
                        {"feature_noise", feature_noise}};
    write_manifest(out, snap, seed, {out + "/scene.json", out + "/gt_points.xyz"},
                   {{"gen_scene", seconds_since(t0)}});
    std::cout << "scene written to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& scene_dir, const std::string& out, nsr::TrainConfig tc,
              nsr::FieldConfig fc, int checkpoint_every) {
    auto t0 = std::chrono::steady_clock::now();
    nsr::Scene scene = nsr::load_scene(scene_dir);
    if (tc.consistency.loss_kind == nsr::LossKind::none) tc.lambda2 = 0.0;
    tc.validate();
    fs::create_directories(out);
    std::string ckpt_path = out + "/checkpoint.nsrw";
    nsr::MetricsWriter metrics(out + "/metrics.csv");
    nsr::TrainerState st = nsr::TrainerState::init(fc, tc);
    for (int i = 0; i < tc.steps; ++i) {
        nsr::StepReport rep = nsr::train_step(st, scene, tc);
        metrics.write(rep);
        if (checkpoint_every > 0 && (i + 1) % checkpoint_every == 0) {
            nsr::save_checkpoint(ckpt_path, st.params);
            metrics.flush();
        }
        if (rep.step % 100 == 0) {
            std::cout << "step " << rep.step << " L=" << rep.total
                      << " color=" << rep.l_color << " eik=" << rep.l_eik
                      << " feat=" << rep.l_feat << " cross=" << rep.crossing_frac << "\n";
        }
    }
    nsr::save_checkpoint(ckpt_path, st.params);
    nlohmann::json snap{{"scene", scene_dir},
                        {"loss", nsr::to_string(tc.consistency.loss_kind)},
                        {"steps", tc.steps},
                        {"warmup_steps", tc.warmup_steps},
                        {"rays_per_batch", tc.rays_per_batch},
                        {"lambda1", tc.lambda1},
                        {"lambda2", tc.lambda2},
                        {"patch_size", tc.consistency.patch_size},
                        {"top_k", tc.consistency.top_k},
                        {"geo_layers", fc.geo_layers},
                        {"geo_hidden", fc.geo_hidden}};
    write_manifest(out, snap, tc.seed, {ckpt_path, out + "/metrics.csv"},
                   {{"train", seconds_since(t0)}});
    return 0;
}

int cmd_mesh(const std::string& ckpt, int res, const std::string& out) {
    auto t0 = std::chrono::steady_clock::now();
    nsr::FieldParams params = nsr::load_checkpoint(ckpt);
    nsr::Mesh mesh = nsr::marching_cubes(
        [&](const Vec3& p) { return nsr::eval_sdf(params, p); }, res);
    nsr::save_ply(out, mesh);
    std::cout << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
              << " triangles in " << seconds_since(t0) << " s\n";
    return 0;
}

int cmd_eval(const std::string& mesh_path, const std::string& gt_path,
             const std::string& scene_name, const std::string& loss_name, int samples,
             uint64_t seed) {
    nsr::Mesh mesh = nsr::load_ply(mesh_path);
    std::vector<Vec3> mesh_pts = nsr::sample_mesh(mesh, samples, seed);
    std::vector<Vec3> gt;
    std::ifstream is(gt_path);
    if (!is) throw nsr::ParseError("cannot open ground-truth points: " + gt_path);
    double x, y, z;
    while (is >> x >> y >> z) gt.emplace_back(x, y, z);
    nsr::ChamferResult cd = nsr::chamfer_distance(mesh_pts, gt);
    std::cout << "scene,loss,acc,comp,mean\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g,%.9g\n", scene_name.c_str(),
                  loss_name.c_str(), cd.accuracy, cd.completeness, cd.mean);
    std::cout << buf;
    return 0;
}

int cmd_check_warp(const std::string& scene_dir, int samples, uint64_t seed,
                   const std::string& loss_name, int patch_size, bool lenient) {
    nsr::Scene scene = nsr::load_scene(scene_dir);
    if (!scene.shape) throw nsr::ValidationError("scene has no analytic shape for the check");
    nsr::ConsistencyConfig ccfg;
    ccfg.loss_kind = nsr::loss_kind_from_string(loss_name);
    ccfg.patch_size = patch_size;
    nsr::Rng rng(seed);
    double max_reproj = 0.0;
    std::vector<double> losses;
    int tried = 0, hit = 0;
    while (hit < samples && tried < samples * 50) {
        ++tried;
        int ref = int(rng.uniform_index(scene.cameras.size()));
        const nsr::Camera& cam = scene.cameras[ref];
        int px = int(rng.uniform_index(cam.width)), py = int(rng.uniform_index(cam.height));
        nsr::Ray ray;
        try {
            ray = nsr::pixel_to_ray(cam, Vec2(px, py));
        } catch (const nsr::RayMissesBounds&) {
            continue;
        }
        auto t = nsr::sphere_trace(*scene.shape, ray);
        if (!t) continue;
        Vec3 p = ray.at(*t);
        Vec3 n = nsr::analytic_sdf_gradient(*scene.shape, p).normalized();
        nsr::TangentPlane plane = nsr::TangentPlane::through(n, p);
        // reprojection: the ref pixel must land on the direct projection of p
        int src = int(rng.uniform_index(scene.cameras.size()));
        if (src != ref) {
            try {
                nsr::Mat3 H = nsr::homography_unnormalized(cam, scene.cameras[src], plane);
                Vec2 warped = nsr::apply_homography(H, Vec2(px, py));
                Vec2 direct = nsr::project(scene.cameras[src], p);
                max_reproj = std::max(max_reproj, (warped - direct).norm());
            } catch (const nsr::Error&) {
                // point behind the source camera; not a warp failure
            }
        }
        ++hit;
        // The loss-at-truth statistic is only meaningful where the warp
        // assumptions hold: the point must be seen head-on enough by the
        // reference and by each counted source view (visibility is decided
        // against the analytic shape), and for patchwise losses the whole
        // patch must lie on the tangent plane (flat surface region) — on a
        // curved region a homography cannot represent the true warp.
        if (n.dot(-ray.v) < 0.3) continue;
        if (ccfg.loss_kind != nsr::LossKind::pixel_sim) {
            bool planar = true;
            int h = ccfg.patch_size / 2;
            for (int cy = -h; cy <= h && planar; cy += 2 * h) {
                for (int cx = -h; cx <= h && planar; cx += 2 * h) {
                    try {
                        nsr::Ray cr = nsr::pixel_to_ray(cam, Vec2(px + cx, py + cy));
                        auto ct = nsr::sphere_trace(*scene.shape, cr);
                        if (!ct || std::abs(plane.n.dot(cr.at(*ct)) + plane.d) > 1e-4)
                            planar = false;
                    } catch (const nsr::RayMissesBounds&) {
                        planar = false;
                    }
                }
            }
            if (!planar) continue;
        }
        std::vector<nsr::Camera> vis_cams{cam};
        std::vector<nsr::FeatureMap> vis_maps{scene.features[ref]};
        for (int v = 0; v < int(scene.cameras.size()); ++v) {
            if (v == ref) continue;
            Vec3 c = scene.cameras[v].center();
            double dist = (p - c).norm();
            if (n.dot((c - p).normalized()) < 0.3) continue;
            nsr::Ray vray{c, (p - c).normalized(), 1e-4, dist + 1.0};
            auto vt = nsr::sphere_trace(*scene.shape, vray);
            if (!vt || std::abs(*vt - dist) > 1e-4) continue;
            vis_cams.push_back(scene.cameras[v]);
            vis_maps.push_back(scene.features[v]);
        }
        if (vis_cams.size() < 2) continue;
        nsr::PatchSpec patch{Vec2(px, py), ccfg.patch_size};
        auto res = nsr::select_and_aggregate(0, p, plane, patch, vis_cams, vis_maps, ccfg, false);
        if (res) losses.push_back(res->loss);
    }
    if (losses.empty())
        throw nsr::ValidationError(
            "no usable warp samples (patchwise losses need flat surface regions; "
            "try --loss pixel-sim or a box scene)");
    std::sort(losses.begin(), losses.end());
    double median = losses[losses.size() / 2];
    std::cout << "samples: " << hit << "\n";
    std::cout << "max reprojection error (px): " << max_reproj << "\n";
    std::cout << "median feature loss at ground truth: " << median << "\n";
    bool ok = max_reproj <= 1e-5 && median <= 1e-3;
    if (!ok && !lenient) {
        std::cerr << "check-warp: thresholds exceeded\n";
        return 3;
    }
    std::cout << (ok ? "check-warp: pass\n" : "check-warp: reported (lenient)\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"feature-consistent neural surface reconstruction"};
    app.require_subcommand(1);

    // gen-scene
    auto* gen = app.add_subcommand("gen-scene", "generate a synthetic scene");
    std::string g_shape = "sphere", g_res = "64x64", g_out;
    int g_views = 12, g_channels = 8, g_scale = 1;
    double g_noise = 0.0;
    uint64_t g_seed = 0;
    gen->add_option("--shape", g_shape, "sphere|box|torus|union");
    gen->add_option("--views", g_views);
    gen->add_option("--res", g_res, "WxH");
    gen->add_option("--channels", g_channels);
    gen->add_option("--feature-scale", g_scale, "feature grid downscale: 1|2|4|8");
    gen->add_option("--feature-noise", g_noise);
    gen->add_option("--seed", g_seed);
    gen->add_option("--out", g_out)->required();

    // train
    auto* train = app.add_subcommand("train", "optimize the field on a scene");
    std::string t_scene, t_out, t_loss = "patch-ncc", t_config;
    nsr::TrainConfig tc;
    nsr::FieldConfig fc;
    int t_steps = tc.steps, t_patch = 11, t_topk = 4, t_rays = tc.rays_per_batch;
    int t_warmup = tc.warmup_steps, t_threads = 0, t_ckpt_every = 500;
    int t_geo_layers = fc.geo_layers, t_geo_hidden = fc.geo_hidden, t_geo_feat = fc.geo_feat;
    int t_rad_layers = fc.rad_layers, t_rad_hidden = fc.rad_hidden;
    uint64_t t_seed = 0;
    train->add_option("--scene", t_scene)->required();
    train->add_option("--out", t_out)->required();
    train->add_option("--loss", t_loss, "none|pixel-sim|patch-sim|patch-ncc|patch-ssim");
    train->add_option("--steps", t_steps);
    train->add_option("--warmup", t_warmup);
    train->add_option("--rays", t_rays);
    train->add_option("--patch", t_patch);
    train->add_option("--topk", t_topk);
    train->add_option("--seed", t_seed);
    train->add_option("--threads", t_threads, "worker cap; results unchanged");
    train->add_option("--checkpoint-every", t_ckpt_every);
    train->add_option("--geo-layers", t_geo_layers);
    train->add_option("--geo-hidden", t_geo_hidden);
    train->add_option("--geo-feat", t_geo_feat);
    train->add_option("--rad-layers", t_rad_layers);
    train->add_option("--rad-hidden", t_rad_hidden);
    train->add_option("--config", t_config, "key=value file; flags win");

    // mesh
    auto* mesh = app.add_subcommand("mesh", "extract the zero level set");
    std::string m_ckpt, m_out;
    int m_res = 128;
    mesh->add_option("--ckpt", m_ckpt)->required();
    mesh->add_option("--res", m_res);
    mesh->add_option("--out", m_out)->required();

    // eval
    auto* ev = app.add_subcommand("eval", "chamfer distance against ground-truth points");
    std::string e_mesh, e_gt, e_scene = "scene", e_loss = "-";
    int e_samples = 100000;
    uint64_t e_seed = 0;
    ev->add_option("--mesh", e_mesh)->required();
    ev->add_option("--gt", e_gt)->required();
    ev->add_option("--scene-name", e_scene);
    ev->add_option("--loss-name", e_loss);
    ev->add_option("--samples", e_samples);
    ev->add_option("--seed", e_seed);

    // check-warp
    auto* chk = app.add_subcommand("check-warp", "warp consistency self-check");
    std::string c_scene, c_loss = "pixel-sim";
    int c_samples = 200, c_patch = 11;
    uint64_t c_seed = 0;
    bool c_lenient = false;
    chk->add_option("--scene", c_scene)->required();
    chk->add_option("--samples", c_samples);
    chk->add_option("--seed", c_seed);
    chk->add_option("--loss", c_loss);
    chk->add_option("--patch", c_patch);
    chk->add_flag("--lenient", c_lenient, "report threshold breaches without failing");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen)
            return cmd_gen_scene(g_shape, g_views, g_res, g_channels, g_scale, g_noise, g_seed,
                                 g_out);
        if (*train) {
            if (!t_config.empty()) apply_config_kv(read_config_file(t_config), tc, fc);
            auto set_if = [&](const char* flag, auto& dst, const auto& src) {
                if (train->count(flag)) dst = src;
            };
            set_if("--steps", tc.steps, t_steps);
            set_if("--warmup", tc.warmup_steps, t_warmup);
            set_if("--rays", tc.rays_per_batch, t_rays);
            set_if("--patch", tc.consistency.patch_size, t_patch);
            set_if("--topk", tc.consistency.top_k, t_topk);
            set_if("--seed", tc.seed, t_seed);
            set_if("--threads", tc.n_threads, t_threads);
            set_if("--geo-layers", fc.geo_layers, t_geo_layers);
            set_if("--geo-hidden", fc.geo_hidden, t_geo_hidden);
            set_if("--geo-feat", fc.geo_feat, t_geo_feat);
            set_if("--rad-layers", fc.rad_layers, t_rad_layers);
            set_if("--rad-hidden", fc.rad_hidden, t_rad_hidden);
            if (train->count("--loss")) tc.consistency.loss_kind = nsr::loss_kind_from_string(t_loss);
            return cmd_train(t_scene, t_out, tc, fc, t_ckpt_every);
        }
        if (*mesh) {
            if (m_res < 8) {
                std::cerr << "mesh: --res must be at least 8\n";
                return 2;
            }
            return cmd_mesh(m_ckpt, m_res, m_out);
        }
        if (*ev) return cmd_eval(e_mesh, e_gt, e_scene, e_loss, e_samples, e_seed);
        if (*chk) return cmd_check_warp(c_scene, c_samples, c_seed, c_loss, c_patch, c_lenient);
    } catch (const nsr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
