#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsr/common.hpp"
#include "nsr/feature_map.hpp"
#include "nsr/geometry.hpp"
#include "nsr/random.hpp"

namespace nsr {

enum class ShapeKind { sphere, box, torus, union_ };

// Analytic test geometry; a union shape holds children.
struct ShapeSpec {
    ShapeKind kind = ShapeKind::sphere;
    double radius = 0.5;                       // sphere
    Vec3 half_extents = Vec3(0.3, 0.3, 0.3);   // box
    double r_major = 0.4, r_minor = 0.15;      // torus
    Vec3 center = Vec3::Zero();
    std::vector<ShapeSpec> children;           // union

    // Radius of the enclosing ball around the origin.
    double bounding_radius() const {
        double local = 0.0;
        switch (kind) {
            case ShapeKind::sphere: local = radius; break;
            case ShapeKind::box: local = half_extents.norm(); break;
            case ShapeKind::torus: local = r_major + r_minor; break;
            case ShapeKind::union_: {
                double r = 0.0;
                for (const auto& c : children) r = std::max(r, c.bounding_radius());
                return r;  // children carry their own centers
            }
        }
        return center.norm() + local;
    }

    static ShapeSpec named(const std::string& name) {
        ShapeSpec s;
        if (name == "sphere") {
            s.kind = ShapeKind::sphere;
            s.radius = 0.5;
        } else if (name == "box") {
            s.kind = ShapeKind::box;
            s.half_extents = Vec3(0.42, 0.42, 0.42);
        } else if (name == "torus") {
            s.kind = ShapeKind::torus;
        } else if (name == "union") {
            s.kind = ShapeKind::union_;
            ShapeSpec sph;
            sph.kind = ShapeKind::sphere;
            sph.radius = 0.45;
            sph.center = Vec3(0.0, 0.0, 0.18);
            ShapeSpec box;
            box.kind = ShapeKind::box;
            box.half_extents = Vec3(0.38, 0.38, 0.2);
            box.center = Vec3(0.0, 0.0, -0.28);
            s.children = {sph, box};
        } else {
            throw ValidationError("unknown shape: " + name);
        }
        return s;
    }
};

inline double analytic_sdf(const ShapeSpec& shape, const Vec3& p) {
    Vec3 q = p - shape.center;
    switch (shape.kind) {
        case ShapeKind::sphere:
            return q.norm() - shape.radius;
        case ShapeKind::box: {
            Vec3 d = q.cwiseAbs() - shape.half_extents;
            Vec3 outside = d.cwiseMax(0.0);
            double inside = std::min(0.0, d.maxCoeff());
            return outside.norm() + inside;
        }
        case ShapeKind::torus: {
            double qx = std::hypot(q.x(), q.z()) - shape.r_major;
            return std::hypot(qx, q.y()) - shape.r_minor;
        }
        case ShapeKind::union_: {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : shape.children) best = std::min(best, analytic_sdf(c, p));
            return best;
        }
    }
    return 0.0;
}

inline Vec3 analytic_sdf_gradient(const ShapeSpec& shape, const Vec3& p, double h = 1e-6) {
    Vec3 g;
    for (int i = 0; i < 3; ++i) {
        Vec3 e = Vec3::Zero();
        e[i] = h;
        g[i] = (analytic_sdf(shape, p + e) - analytic_sdf(shape, p - e)) / (2 * h);
    }
    return g;
}

// Sphere tracing along [t_near, t_far]; nullopt when the ray exits the
// bounds without hitting the surface.
inline std::optional<double> sphere_trace(const ShapeSpec& shape, const Ray& ray,
                                          int max_iters = 256, double tol = 1e-6) {
    double t = ray.t_near;
    for (int i = 0; i < max_iters; ++i) {
        double d = analytic_sdf(shape, ray.at(t));
        if (d < tol) {
            // polish with bisection so the result is accurate even after an
            // overstep
            double lo = std::max(ray.t_near, t - 1e-3), hi = t + 1e-3;
            for (int k = 0; k < 40; ++k) {
                double mid = 0.5 * (lo + hi);
                (analytic_sdf(shape, ray.at(mid)) > 0 ? lo : hi) = mid;
            }
            return 0.5 * (lo + hi);
        }
        t += d;
        if (t > ray.t_far) return std::nullopt;
    }
    return std::nullopt;
}

struct Scene {
    std::vector<Camera> cameras;
    std::vector<std::vector<double>> images;  // H*W*3, row-major, rgb
    std::vector<FeatureMap> features;
    Vec3 background = Vec3::Zero();
    std::vector<Vec3> gt_points;
    std::optional<ShapeSpec> shape;
    std::string dir;

    Vec3 pixel(int view, int x, int y) const {
        const auto& img = images[view];
        std::size_t i = (std::size_t(y) * cameras[view].width + x) * 3;
        return Vec3(img[i], img[i + 1], img[i + 2]);
    }

    int feature_channels() const { return features.empty() ? 0 : features[0].channels; }
};

namespace detail {

// Deterministic smooth functions used by the generator. Frequencies are kept
// low so features survive bilinear resampling at reduced scales.
struct SurfaceEmbedding {
    int channels;
    std::vector<Vec3> freq;
    std::vector<double> phase;
    std::vector<double> dc;

    explicit SurfaceEmbedding(int C) : channels(C) {
        Rng rng(0x5EEDFEA7ull);
        for (int c = 0; c < C; ++c) {
            Vec3 f(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            f *= 1.5 / std::max(f.norm(), 1e-9);  // |f| = 1.5 rad per world unit
            f *= 0.5 + 0.5 * rng.uniform();
            freq.push_back(f);
            phase.push_back(rng.uniform(0.0, 6.283185307179586));
            dc.push_back(rng.uniform(-0.3, 0.3));
        }
    }

    VecX eval(const Vec3& p) const {
        VecX out(channels);
        for (int c = 0; c < channels; ++c)
            out[c] = dc[c] + std::sin(freq[c].dot(p) + phase[c]);
        return out;
    }

    VecX background_feature() const { return VecX::Constant(channels, 1.5); }
};

// Three-octave deterministic surface texture driving the albedo.
inline Vec3 texture_albedo(const Vec3& p) {
    Vec3 base(0.62, 0.55, 0.48);
    const Vec3 dirs[3] = {Vec3(1.0, 0.7, -0.4), Vec3(-0.5, 1.1, 0.8), Vec3(0.3, -0.9, 1.2)};
    double amp = 0.16;
    double f = 5.0;
    Vec3 out = base;
    for (int o = 0; o < 3; ++o) {
        for (int c = 0; c < 3; ++c)
            out[c] += amp * std::sin(f * dirs[o].normalized().dot(p) + 1.7 * c + 0.9 * o);
        amp *= 0.55;
        f *= 2.1;
    }
    return out.cwiseMax(0.05).cwiseMin(0.98);
}

inline Vec3 shade(const ShapeSpec& shape, const Vec3& p) {
    Vec3 n = analytic_sdf_gradient(shape, p).normalized();
    Vec3 light = Vec3(0.4, 0.5, 0.8).normalized();
    double diffuse = std::max(0.0, n.dot(light));
    double intensity = 0.3 + 0.7 * diffuse;
    return (texture_albedo(p) * intensity).cwiseMax(0.0).cwiseMin(1.0);
}

inline Camera look_at_camera(const Vec3& pos, int width, int height, double focal_px) {
    Vec3 fwd = (-pos).normalized();  // camera z axis points at the origin
    Vec3 up(0, 0, 1);
    if (std::abs(fwd.dot(up)) > 0.99) up = Vec3(0, 1, 0);
    Vec3 xaxis = fwd.cross(up).normalized();
    Vec3 yaxis = fwd.cross(xaxis).normalized();  // image y points downward
    Camera cam;
    cam.R.row(0) = xaxis.transpose();
    cam.R.row(1) = yaxis.transpose();
    cam.R.row(2) = fwd.transpose();
    cam.t = -cam.R * pos;
    cam.K = Mat3::Identity();
    cam.K(0, 0) = cam.K(1, 1) = focal_px;
    cam.K(0, 2) = (width - 1) / 2.0;
    cam.K(1, 2) = (height - 1) / 2.0;
    cam.width = width;
    cam.height = height;
    cam.validate();
    return cam;
}

inline void write_raw_image(const std::string& path, const std::vector<double>& rgb) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open image for writing: " + path);
    for (double v : rgb) {
        float f = float(v);
        os.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
}

inline std::vector<double> read_raw_image(const std::string& path, std::size_t count) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open image: " + path);
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        float f;
        is.read(reinterpret_cast<char*>(&f), sizeof(float));
        if (!is) throw ParseError("truncated image file: " + path);
        out[i] = double(f);
    }
    return out;
}

inline nlohmann::json shape_to_json(const ShapeSpec& s) {
    nlohmann::json j;
    switch (s.kind) {
        case ShapeKind::sphere: j["kind"] = "sphere"; break;
        case ShapeKind::box: j["kind"] = "box"; break;
        case ShapeKind::torus: j["kind"] = "torus"; break;
        case ShapeKind::union_: j["kind"] = "union"; break;
    }
    j["radius"] = s.radius;
    j["half_extents"] = {s.half_extents.x(), s.half_extents.y(), s.half_extents.z()};
    j["r_major"] = s.r_major;
    j["r_minor"] = s.r_minor;
    j["center"] = {s.center.x(), s.center.y(), s.center.z()};
    for (const auto& c : s.children) j["children"].push_back(shape_to_json(c));
    return j;
}

inline ShapeSpec shape_from_json(const nlohmann::json& j) {
    ShapeSpec s;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "sphere") s.kind = ShapeKind::sphere;
    else if (kind == "box") s.kind = ShapeKind::box;
    else if (kind == "torus") s.kind = ShapeKind::torus;
    else if (kind == "union") s.kind = ShapeKind::union_;
    else throw ParseError("unknown shape kind in scene.json: " + kind);
    s.radius = j.at("radius").get<double>();
    auto he = j.at("half_extents");
    s.half_extents = Vec3(he[0], he[1], he[2]);
    s.r_major = j.at("r_major").get<double>();
    s.r_minor = j.at("r_minor").get<double>();
    auto c = j.at("center");
    s.center = Vec3(c[0], c[1], c[2]);
    if (j.contains("children"))
        for (const auto& cj : j["children"]) s.children.push_back(shape_from_json(cj));
    return s;
}

// Area-weighted sample on the surface of a primitive.
inline Vec3 sample_primitive_surface(const ShapeSpec& s, Rng& rng) {
    switch (s.kind) {
        case ShapeKind::sphere: {
            double z = rng.uniform(-1, 1);
            double a = rng.uniform(0.0, 6.283185307179586);
            double r = std::sqrt(std::max(0.0, 1 - z * z));
            return s.center + s.radius * Vec3(r * std::cos(a), r * std::sin(a), z);
        }
        case ShapeKind::box: {
            const Vec3& h = s.half_extents;
            double areas[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
            double total = areas[0] + areas[1] + areas[2];
            double u = rng.uniform() * total;
            int axis = u < areas[0] ? 0 : (u < areas[0] + areas[1] ? 1 : 2);
            Vec3 p;
            p[axis] = rng.uniform() < 0.5 ? -h[axis] : h[axis];
            int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
            p[a1] = rng.uniform(-h[a1], h[a1]);
            p[a2] = rng.uniform(-h[a2], h[a2]);
            return s.center + p;
        }
        case ShapeKind::torus: {
            // rejection in the tube angle keeps the density uniform in area
            for (;;) {
                double u = rng.uniform(0.0, 6.283185307179586);
                double v = rng.uniform(0.0, 6.283185307179586);
                double w = rng.uniform();
                if (w > (s.r_major + s.r_minor * std::cos(v)) / (s.r_major + s.r_minor)) continue;
                double rr = s.r_major + s.r_minor * std::cos(v);
                return s.center +
                       Vec3(rr * std::cos(u), s.r_minor * std::sin(v), rr * std::sin(u));
            }
        }
        case ShapeKind::union_: {
            // pick a child by rough area, then reject points inside the union
            for (;;) {
                std::size_t idx = rng.uniform_index(s.children.size());
                Vec3 p = sample_primitive_surface(s.children[idx], rng);
                bool inside_other = false;
                for (std::size_t k = 0; k < s.children.size(); ++k)
                    if (k != idx && analytic_sdf(s.children[k], p) < -1e-9) inside_other = true;
                if (!inside_other) return p;
            }
        }
    }
    return Vec3::Zero();
}

}  // namespace detail

struct SceneGenConfig {
    int n_views = 12;
    int width = 64;
    int height = 64;
    int channels = 8;
    int feature_scale = 1;  // 1, 2, 4 or 8
    double feature_noise = 0.0;
    uint64_t seed = 0;
    int gt_samples = 100000;
    double camera_radius = 2.8;
    Vec3 background = Vec3::Zero();
};

inline void generate_scene(const ShapeSpec& shape, const SceneGenConfig& cfg,
                           const std::string& out_dir) {
    if (cfg.n_views < 4) throw ValidationError("need at least 4 views");
    if (shape.bounding_radius() > 0.9)
        throw ShapeTooLarge("shape exceeds the 0.9 margin inside the unit sphere");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    double focal = 0.5 * cfg.width / std::tan(std::atan2(1.05, cfg.camera_radius));
    std::vector<Camera> cams;
    for (int v = 0; v < cfg.n_views; ++v) {
        double az = 6.283185307179586 * double(v) / cfg.n_views;
        double el = (v % 2 == 0) ? 0.42 : 0.85;  // radians above the equator
        Vec3 pos = cfg.camera_radius *
                   Vec3(std::cos(az) * std::cos(el), std::sin(az) * std::cos(el), std::sin(el));
        cams.push_back(detail::look_at_camera(pos, cfg.width, cfg.height, focal));
    }

    detail::SurfaceEmbedding embed(cfg.channels);
    nlohmann::json views = nlohmann::json::array();
    char buf[64];
    for (int v = 0; v < cfg.n_views; ++v) {
        const Camera& cam = cams[v];
        std::vector<double> img(std::size_t(cfg.width) * cfg.height * 3, 0.0);
        for (int y = 0; y < cfg.height; ++y) {
            for (int x = 0; x < cfg.width; ++x) {
                Vec3 color = cfg.background;
                try {
                    Ray ray = pixel_to_ray(cam, Vec2(x, y));
                    if (auto t = sphere_trace(shape, ray)) color = detail::shade(shape, ray.at(*t));
                } catch (const RayMissesBounds&) {
                }
                std::size_t i = (std::size_t(y) * cfg.width + x) * 3;
                img[i] = color.x();
                img[i + 1] = color.y();
                img[i + 2] = color.z();
            }
        }
        std::snprintf(buf, sizeof buf, "image_%04d.raw", v);
        std::string image_name = buf;
        detail::write_raw_image(out_dir + "/" + image_name, img);

        FeatureMap fm;
        fm.channels = cfg.channels;
        fm.width = cfg.width;
        fm.height = cfg.height;
        fm.feat_w = cfg.width / cfg.feature_scale;
        fm.feat_h = cfg.height / cfg.feature_scale;
        fm.data.assign(std::size_t(cfg.channels) * fm.feat_h * fm.feat_w, 0.0);
        Rng noise_rng(Rng::derive(cfg.seed, 0xFEA7u, v));
        for (int fy = 0; fy < fm.feat_h; ++fy) {
            for (int fx = 0; fx < fm.feat_w; ++fx) {
                // image coordinate of this feature grid cell center
                double u = (fx + 0.5) * double(cfg.width) / fm.feat_w - 0.5;
                double w = (fy + 0.5) * double(cfg.height) / fm.feat_h - 0.5;
                VecX f = embed.background_feature();
                try {
                    Ray ray = pixel_to_ray(cam, Vec2(u, w));
                    if (auto t = sphere_trace(shape, ray)) f = embed.eval(ray.at(*t));
                } catch (const RayMissesBounds&) {
                }
                for (int c = 0; c < cfg.channels; ++c) {
                    double n = cfg.feature_noise > 0 ? cfg.feature_noise * noise_rng.normal() : 0.0;
                    fm.at(c, fy, fx) = f[c] + n;
                }
            }
        }
        std::snprintf(buf, sizeof buf, "feat_%04d.nsrf", v);
        std::string feat_name = buf;
        save_feature_map(out_dir + "/" + feat_name, fm);

        nlohmann::json jv;
        Mat3 Kt = cam.K.transpose();  // row-major serialization
        Mat3 Rt = cam.R.transpose();
        jv["K"] = std::vector<double>(Kt.data(), Kt.data() + 9);
        jv["R"] = std::vector<double>(Rt.data(), Rt.data() + 9);
        jv["t"] = {cam.t.x(), cam.t.y(), cam.t.z()};
        jv["width"] = cam.width;
        jv["height"] = cam.height;
        jv["image"] = image_name;
        jv["features"] = feat_name;
        views.push_back(jv);
    }

    {
        Rng rng(Rng::derive(cfg.seed, 0x617u));
        std::ofstream os(out_dir + "/gt_points.xyz");
        os.precision(9);
        for (int i = 0; i < cfg.gt_samples; ++i) {
            Vec3 p = detail::sample_primitive_surface(shape, rng);
            os << p.x() << " " << p.y() << " " << p.z() << "\n";
        }
    }

    nlohmann::json j;
    j["views"] = views;
    j["background"] = {cfg.background.x(), cfg.background.y(), cfg.background.z()};
    j["gt_points"] = "gt_points.xyz";
    j["shape"] = detail::shape_to_json(shape);
    std::ofstream os(out_dir + "/scene.json");
    os << j.dump(2) << "\n";
}

inline Scene load_scene(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream is(dir + "/scene.json");
    if (!is) throw ParseError("missing scene.json in " + dir);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed scene.json in " + dir + ": " + e.what());
    }
    Scene scene;
    scene.dir = dir;
    try {
        auto bg = j.at("background");
        scene.background = Vec3(bg[0], bg[1], bg[2]);
        for (const auto& jv : j.at("views")) {
            Camera cam;
            auto K = jv.at("K"), R = jv.at("R"), t = jv.at("t");
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) {
                    cam.K(r, c) = K[r * 3 + c].get<double>();
                    cam.R(r, c) = R[r * 3 + c].get<double>();
                }
            cam.t = Vec3(t[0], t[1], t[2]);
            cam.width = jv.at("width").get<int>();
            cam.height = jv.at("height").get<int>();
            cam.validate();
            scene.cameras.push_back(cam);
            scene.images.push_back(detail::read_raw_image(
                dir + "/" + jv.at("image").get<std::string>(),
                std::size_t(cam.width) * cam.height * 3));
            FeatureMap fm = load_feature_map(dir + "/" + jv.at("features").get<std::string>());
            if (fm.width != cam.width || fm.height != cam.height)
                throw ValidationError("feature map image size mismatch for view " +
                                      std::to_string(scene.cameras.size() - 1));
            scene.features.push_back(std::move(fm));
        }
        if (j.contains("shape")) scene.shape = detail::shape_from_json(j["shape"]);
        if (j.contains("gt_points")) {
            std::ifstream pts(dir + "/" + j["gt_points"].get<std::string>());
            if (pts) {
                double x, y, z;
                while (pts >> x >> y >> z) scene.gt_points.emplace_back(x, y, z);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("scene.json field error in " + dir + ": " + e.what());
    }
    if (scene.cameras.empty()) throw ValidationError("scene has no views: " + dir);
    int C = scene.features[0].channels;
    for (std::size_t v = 0; v < scene.features.size(); ++v)
        if (scene.features[v].channels != C)
            throw ValidationError("inconsistent feature channel count at view " +
                                  std::to_string(v));
    return scene;
}

}  // namespace nsr
