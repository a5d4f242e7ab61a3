#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/encoding.hpp"
#include "nsr/random.hpp"

namespace nsr {

struct FieldConfig {
    int n_freq_pos = 6;
    int n_freq_dir = 4;
    int geo_hidden = 256;
    int geo_layers = 8;  // hidden linear layers of the geometry MLP
    int geo_feat = 256;
    int rad_hidden = 256;
    int rad_layers = 4;  // linear layers of the radiance MLP (last one outputs color)
    double softplus_beta = 100.0;
    double s_init = 20.0;
    double init_radius = 0.5;

    int skip_layer() const { return geo_layers >= 2 ? geo_layers / 2 : -1; }
    int enc_pos_dim() const { return encoded_dim(3, n_freq_pos); }
    int enc_dir_dim() const { return encoded_dim(3, n_freq_dir); }
    int rad_in_dim() const { return 3 + enc_dir_dim() + 3 + geo_feat; }

    int geo_in_dim(int layer) const {
        if (layer == 0) return enc_pos_dim();
        if (layer == skip_layer()) return geo_hidden + enc_pos_dim();
        return geo_hidden;
    }
    int rad_layer_in(int layer) const { return layer == 0 ? rad_in_dim() : rad_hidden; }
    int rad_layer_out(int layer) const { return layer == rad_layers - 1 ? 3 : rad_hidden; }
};

struct LayoutEntry {
    std::string name;
    std::size_t offset;
    std::size_t rows;
    std::size_t cols;  // 1 for biases and scalars
    std::size_t count() const { return rows * cols; }
};

// All learnable scalars as one flat vector plus a layout map.
class FieldParams {
public:
    FieldConfig cfg;
    VecX values;
    std::vector<LayoutEntry> layout;

    static FieldParams geometric_init(const FieldConfig& cfg, uint64_t seed);

    const LayoutEntry& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("unknown parameter block: " + name);
        return layout[it->second];
    }
    Eigen::Map<const MatX> W(const std::string& name) const {
        const auto& e = entry(name + ".W");
        return Eigen::Map<const MatX>(values.data() + e.offset, e.rows, e.cols);
    }
    Eigen::Map<const VecX> b(const std::string& name) const {
        const auto& e = entry(name + ".b");
        return Eigen::Map<const VecX>(values.data() + e.offset, e.rows);
    }
    double gamma() const { return values[entry("s.log").offset]; }
    double s() const { return std::exp(gamma()); }
    std::size_t gamma_offset() const { return entry("s.log").offset; }

    void rebuild_index() {
        index_.clear();
        for (std::size_t i = 0; i < layout.size(); ++i) index_[layout[i].name] = i;
    }

private:
    std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline void append_block(std::vector<LayoutEntry>& layout, std::size_t& off,
                         const std::string& name, std::size_t rows, std::size_t cols) {
    layout.push_back(LayoutEntry{name, off, rows, cols});
    off += rows * cols;
}

inline double softplus(double x, double beta) {
    double bx = beta * x;
    if (bx > 30.0) return x;
    return std::log1p(std::exp(bx)) / beta;
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

inline double eval_sdf(const FieldParams& p, const Vec3& pos);

inline FieldParams FieldParams::geometric_init(const FieldConfig& cfg, uint64_t seed) {
    FieldParams p;
    p.cfg = cfg;
    std::size_t off = 0;
    for (int l = 0; l < cfg.geo_layers; ++l) {
        detail::append_block(p.layout, off, "geo." + std::to_string(l) + ".W", cfg.geo_hidden,
                             cfg.geo_in_dim(l));
        detail::append_block(p.layout, off, "geo." + std::to_string(l) + ".b", cfg.geo_hidden, 1);
    }
    detail::append_block(p.layout, off, "geo.out.W", 1 + cfg.geo_feat, cfg.geo_hidden);
    detail::append_block(p.layout, off, "geo.out.b", 1 + cfg.geo_feat, 1);
    for (int l = 0; l < cfg.rad_layers; ++l) {
        detail::append_block(p.layout, off, "rad." + std::to_string(l) + ".W",
                             cfg.rad_layer_out(l), cfg.rad_layer_in(l));
        detail::append_block(p.layout, off, "rad." + std::to_string(l) + ".b",
                             cfg.rad_layer_out(l), 1);
    }
    detail::append_block(p.layout, off, "s.log", 1, 1);
    p.values = VecX::Zero(off);
    p.rebuild_index();

    Rng rng(seed);
    auto fill_normal = [&](const LayoutEntry& e, double mean, double std) {
        for (std::size_t i = 0; i < e.count(); ++i)
            p.values[e.offset + i] = mean + std * rng.normal();
    };
    // Geometry MLP: SAL-style init so that sdf(x) ~ |x| - r at start. Raw-point
    // columns keep the sqrt(2/out) scale; encoding columns start at zero.
    for (int l = 0; l < cfg.geo_layers; ++l) {
        const auto& e = p.entry("geo." + std::to_string(l) + ".W");
        double std = std::sqrt(2.0 / double(e.rows));
        fill_normal(e, 0.0, std);
        Eigen::Map<MatX> w(p.values.data() + e.offset, e.rows, e.cols);
        if (l == 0) {
            w.rightCols(e.cols - 3).setZero();
        } else if (l == cfg.skip_layer()) {
            // zero the encoded-input block of the concatenation
            w.rightCols(cfg.enc_pos_dim()).setZero();
            for (std::size_t r = 0; r < e.rows; ++r)
                for (int c = 0; c < 3; ++c) w(r, cfg.geo_hidden + c) = std * rng.normal();
        }
    }
    {
        const auto& e = p.entry("geo.out.W");
        Eigen::Map<MatX> w(p.values.data() + e.offset, e.rows, e.cols);
        double mean = std::sqrt(M_PI) / std::sqrt(double(e.cols));
        for (std::size_t c = 0; c < e.cols; ++c) w(0, c) = mean + 1e-4 * rng.normal();
        double std = std::sqrt(2.0 / double(e.cols));
        for (std::size_t r = 1; r < e.rows; ++r)
            for (std::size_t c = 0; c < e.cols; ++c) w(r, c) = std * rng.normal();
        const auto& eb = p.entry("geo.out.b");
        p.values[eb.offset] = -cfg.init_radius;
    }
    for (int l = 0; l < cfg.rad_layers; ++l) {
        const auto& e = p.entry("rad." + std::to_string(l) + ".W");
        fill_normal(e, 0.0, std::sqrt(1.0 / double(e.cols)));
    }
    p.values[p.entry("s.log").offset] = std::log(cfg.s_init);
    // The softplus units carry a small positive mean relative to ReLU, which
    // shifts the zero level set inward of init_radius. Calibrate the output
    // bias so the initial surface sits at the requested radius.
    {
        double acc = 0.0;
        const int k = 64;
        for (int i = 0; i < k; ++i) {
            Vec3 d(rng.normal(), rng.normal(), rng.normal());
            d.normalize();
            acc += eval_sdf(p, cfg.init_radius * d);
        }
        p.values[p.entry("geo.out.b").offset] -= acc / k;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Forward/backward passes. A trace records one forward evaluation batch; the
// backward walk consumes it once.

// Geometry pass over N points. In dual mode every point occupies 4 columns:
// value, then the tangent w.r.t. the 3 point coordinates (so outputs carry
// the spatial gradient of the sdf, i.e. the normal).
struct GeoTrace {
    int n_points = 0;
    int stride = 1;  // 1 value-only, 4 dual
    MatX enc;
    std::vector<MatX> inputs;   // input of each hidden linear layer
    std::vector<MatX> preact;   // pre-activation of each hidden layer
    MatX hidden_out;            // activated output of the last hidden layer
    MatX out;                   // (1+F) x (stride*N)
    bool consumed = false;

    double sdf(int j) const { return out(0, stride * j); }
    Vec3 normal(int j) const {
        return Vec3(out(0, stride * j + 1), out(0, stride * j + 2), out(0, stride * j + 3));
    }
    VecX feat(int j) const { return out.col(stride * j).tail(out.rows() - 1); }
};

namespace detail {

// Shared scratch for the softplus kernels. Strided-map expressions fall back
// to scalar libm calls, so the kernels gather the value columns into these
// contiguous buffers, run packet-vectorized math, and scatter back. One set
// per thread; sizes are reused across calls.
struct SoftplusScratch {
    MatX zv, e, sg, yv;
};
inline SoftplusScratch& softplus_scratch() {
    thread_local SoftplusScratch s;
    return s;
}

// Numerically stable pieces, computed contiguously:
//   softplus(z) = max(z, 0) + log(1 + exp(-|beta z|)) / beta
//   sigmoid(beta z) = z >= 0 ? 1/(1+e) : e/(1+e),   e = exp(-|beta z|)
inline void softplus_value(const MatX& zv, MatX& e, MatX& yv, double beta) {
    e = (-(beta * zv.array()).abs()).exp();
    yv = zv.array().max(0.0) + (1.0 + e.array()).log() / beta;
}
inline void softplus_sigmoid(const MatX& zv, const MatX& e, MatX& sg) {
    sg = (zv.array() >= 0.0)
             .select((1.0 + e.array()).inverse(), e.array() / (1.0 + e.array()));
}

inline void softplus_forward(const MatX& z, MatX& y, double beta, int stride) {
    y.resizeLike(z);
    auto& ws = softplus_scratch();
    if (stride == 1) {
        softplus_value(z, ws.e, ws.yv, beta);
        y = ws.yv;
        return;
    }
    const Eigen::Index n = z.cols() / 4;
    ws.zv.resize(z.rows(), n);
    for (Eigen::Index j = 0; j < n; ++j) ws.zv.col(j) = z.col(4 * j);
    softplus_value(ws.zv, ws.e, ws.yv, beta);
    softplus_sigmoid(ws.zv, ws.e, ws.sg);
    for (Eigen::Index j = 0; j < n; ++j) {
        y.col(4 * j) = ws.yv.col(j);
        for (int k = 1; k < 4; ++k) y.col(4 * j + k) = ws.sg.col(j).cwiseProduct(z.col(4 * j + k));
    }
}

// Adjoint of softplus_forward: consumes ybar, produces zbar.
inline void softplus_backward(const MatX& z, const MatX& ybar, MatX& zbar, double beta,
                              int stride) {
    zbar.resizeLike(z);
    auto& ws = softplus_scratch();
    if (stride == 1) {
        ws.e = (-(beta * z.array()).abs()).exp();
        softplus_sigmoid(z, ws.e, ws.sg);
        zbar = ybar.cwiseProduct(ws.sg);
        return;
    }
    const Eigen::Index n = z.cols() / 4;
    ws.zv.resize(z.rows(), n);
    for (Eigen::Index j = 0; j < n; ++j) ws.zv.col(j) = z.col(4 * j);
    ws.e = (-(beta * ws.zv.array()).abs()).exp();
    softplus_sigmoid(ws.zv, ws.e, ws.sg);
    MatX& tsum = ws.yv;
    tsum.setZero(z.rows(), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (int k = 1; k < 4; ++k) {
            tsum.col(j) += ybar.col(4 * j + k).cwiseProduct(z.col(4 * j + k));
            zbar.col(4 * j + k) = ybar.col(4 * j + k).cwiseProduct(ws.sg.col(j));
        }
    }
    for (Eigen::Index j = 0; j < n; ++j)
        zbar.col(4 * j) =
            ybar.col(4 * j).cwiseProduct(ws.sg.col(j)) +
            (beta * ws.sg.col(j).array() * (1.0 - ws.sg.col(j).array()) * tsum.col(j).array())
                .matrix();
}

inline void add_bias(MatX& z, const Eigen::Map<const VecX>& b, int stride) {
    for (Eigen::Index c = 0; c < z.cols(); c += stride) z.col(c) += b;
}

}  // namespace detail

// points: 3 x N.
inline GeoTrace geo_forward(const FieldParams& p, const MatX& points, bool dual) {
    const auto& cfg = p.cfg;
    GeoTrace tr;
    tr.n_points = int(points.cols());
    tr.stride = dual ? 4 : 1;
    const int N = tr.n_points, S = tr.stride;
    tr.enc.resize(cfg.enc_pos_dim(), S * N);
    if (dual) {
        for (int j = 0; j < N; ++j)
            tr.enc.middleCols(4 * j, 4) = positional_encoding_dual3(points.col(j), cfg.n_freq_pos);
    } else {
        for (int j = 0; j < N; ++j)
            positional_encoding_into(points.col(j), cfg.n_freq_pos, tr.enc.col(j));
    }
    tr.inputs.resize(cfg.geo_layers);
    tr.preact.resize(cfg.geo_layers);
    MatX h = tr.enc;
    for (int l = 0; l < cfg.geo_layers; ++l) {
        if (l == cfg.skip_layer()) {
            // The concatenation is scaled by 1/sqrt(2) so the activation
            // variance stays level across the skip; the geometric init
            // relies on this to keep sdf ~ |x| - r at depth.
            MatX cat(h.rows() + tr.enc.rows(), h.cols());
            cat << h, tr.enc;
            cat *= M_SQRT1_2;
            tr.inputs[l] = std::move(cat);
        } else {
            tr.inputs[l] = std::move(h);
        }
        std::string nm = "geo." + std::to_string(l);
        tr.preact[l].noalias() = p.W(nm) * tr.inputs[l];
        detail::add_bias(tr.preact[l], p.b(nm), S);
        detail::softplus_forward(tr.preact[l], h, cfg.softplus_beta, S);
    }
    tr.hidden_out = h;
    tr.out.noalias() = p.W("geo.out") * h;
    detail::add_bias(tr.out, p.b("geo.out"), S);
    return tr;
}

namespace detail {

inline void accumulate_linear(const FieldParams& p, const std::string& name, const MatX& input,
                              const MatX& ybar, VecX& grad, MatX& input_bar, int stride) {
    const auto& ew = p.entry(name + ".W");
    const auto& eb = p.entry(name + ".b");
    Eigen::Map<MatX> wg(grad.data() + ew.offset, ew.rows, ew.cols);
    wg.noalias() += ybar * input.transpose();
    Eigen::Map<VecX> bg(grad.data() + eb.offset, eb.rows);
    for (Eigen::Index c = 0; c < ybar.cols(); c += stride) bg += ybar.col(c);
    input_bar.noalias() = p.W(name).transpose() * ybar;
}

}  // namespace detail

// out_bar: adjoint of tr.out, same shape. Accumulates into grad (aligned with
// params). The trace is consumed unless keep is set (the walk does not mutate
// the recorded tensors, so a caller may run several adjoint passes whose
// seeds get different scaling later).
inline void geo_backward(const FieldParams& p, GeoTrace& tr, const MatX& out_bar, VecX& grad,
                         bool keep = false) {
    if (tr.consumed) throw TapeConsumed("geometry trace already consumed");
    if (!keep) tr.consumed = true;
    const auto& cfg = p.cfg;
    MatX hbar;
    detail::accumulate_linear(p, "geo.out", tr.hidden_out, out_bar, grad, hbar, tr.stride);
    for (int l = cfg.geo_layers - 1; l >= 0; --l) {
        MatX zbar;
        detail::softplus_backward(tr.preact[l], hbar, zbar, cfg.softplus_beta, tr.stride);
        MatX ibar;
        detail::accumulate_linear(p, "geo." + std::to_string(l), tr.inputs[l], zbar, grad, ibar,
                                  tr.stride);
        if (l == cfg.skip_layer()) {
            hbar = M_SQRT1_2 * ibar.topRows(cfg.geo_hidden);
        } else {
            hbar = std::move(ibar);
        }
        // adjoint of the encoded input is dropped: sample positions are not
        // optimized
        if (l == 0) break;
    }
}

// Backward restricted to a subset of the traced points. Columns with a zero
// adjoint contribute nothing, so skipping them is exact; out_bar_sub holds
// the adjoint columns of the selected points only (stride columns each, in
// pts_idx order).
inline void geo_backward_points(const FieldParams& p, GeoTrace& tr,
                                const std::vector<int>& pts_idx, const MatX& out_bar_sub,
                                VecX& grad, bool keep = false) {
    if (tr.consumed) throw TapeConsumed("geometry trace already consumed");
    if (!keep) tr.consumed = true;
    if (pts_idx.empty()) return;
    const auto& cfg = p.cfg;
    const int S = tr.stride;
    auto gather = [&](const MatX& m) {
        MatX out(m.rows(), S * Eigen::Index(pts_idx.size()));
        for (std::size_t k = 0; k < pts_idx.size(); ++k)
            out.middleCols(S * Eigen::Index(k), S) = m.middleCols(S * pts_idx[k], S);
        return out;
    };
    MatX hbar;
    {
        MatX h_sub = gather(tr.hidden_out);
        detail::accumulate_linear(p, "geo.out", h_sub, out_bar_sub, grad, hbar, S);
    }
    for (int l = cfg.geo_layers - 1; l >= 0; --l) {
        MatX z_sub = gather(tr.preact[l]);
        MatX zbar;
        detail::softplus_backward(z_sub, hbar, zbar, cfg.softplus_beta, S);
        MatX in_sub = gather(tr.inputs[l]);
        MatX ibar;
        detail::accumulate_linear(p, "geo." + std::to_string(l), in_sub, zbar, grad, ibar, S);
        if (l == cfg.skip_layer()) {
            hbar = M_SQRT1_2 * ibar.topRows(cfg.geo_hidden);
        } else {
            hbar = std::move(ibar);
        }
        if (l == 0) break;
    }
}

// Radiance pass over N points; value-only.
struct RadTrace {
    int n_points = 0;
    MatX input;                // rad_in_dim x N
    std::vector<MatX> inputs;  // input of each linear layer
    std::vector<MatX> preact;
    MatX color;  // 3 x N, sigmoid applied
    bool consumed = false;
};

// Rows of the radiance input vector.
struct RadInputRows {
    int p0;
    int dir0;
    int normal0;
    int feat0;
};
inline RadInputRows rad_input_rows(const FieldConfig& cfg) {
    return RadInputRows{0, 3, 3 + cfg.enc_dir_dim(), 3 + cfg.enc_dir_dim() + 3};
}

inline RadTrace rad_forward(const FieldParams& p, const MatX& points, const MatX& dirs,
                            const MatX& normals, const MatX& feats) {
    const auto& cfg = p.cfg;
    RadTrace tr;
    tr.n_points = int(points.cols());
    const int N = tr.n_points;
    tr.input.resize(cfg.rad_in_dim(), N);
    auto rows = rad_input_rows(cfg);
    for (int j = 0; j < N; ++j) {
        tr.input.col(j).segment(rows.p0, 3) = points.col(j);
        positional_encoding_into(dirs.col(j), cfg.n_freq_dir,
                                 tr.input.col(j).segment(rows.dir0, cfg.enc_dir_dim()));
        tr.input.col(j).segment(rows.normal0, 3) = normals.col(j);
        tr.input.col(j).segment(rows.feat0, cfg.geo_feat) = feats.col(j);
    }
    tr.inputs.resize(cfg.rad_layers);
    tr.preact.resize(cfg.rad_layers);
    MatX h = tr.input;
    for (int l = 0; l < cfg.rad_layers; ++l) {
        tr.inputs[l] = std::move(h);
        std::string nm = "rad." + std::to_string(l);
        tr.preact[l].noalias() = p.W(nm) * tr.inputs[l];
        detail::add_bias(tr.preact[l], p.b(nm), 1);
        if (l < cfg.rad_layers - 1) {
            h = tr.preact[l].cwiseMax(0.0);
        } else {
            h = tr.preact[l].unaryExpr([](double z) { return detail::sigmoid(z); });
        }
    }
    tr.color = h;
    return tr;
}

// Returns the adjoint of the full input matrix so the caller can route the
// normal/feature rows back into the geometry pass.
inline MatX rad_backward(const FieldParams& p, RadTrace& tr, const MatX& color_bar, VecX& grad) {
    if (tr.consumed) throw TapeConsumed("radiance trace already consumed");
    tr.consumed = true;
    const auto& cfg = p.cfg;
    MatX hbar = color_bar.cwiseProduct(tr.color.cwiseProduct(MatX::Ones(3, tr.n_points) - tr.color));
    for (int l = cfg.rad_layers - 1; l >= 0; --l) {
        if (l < cfg.rad_layers - 1)
            hbar = hbar.cwiseProduct(
                (tr.preact[l].array() > 0.0).cast<double>().matrix());
        MatX ibar;
        detail::accumulate_linear(p, "rad." + std::to_string(l), tr.inputs[l], hbar, grad, ibar, 1);
        hbar = std::move(ibar);
    }
    return hbar;
}

// ---------------------------------------------------------------------------
// Convenience single-point API.

struct FieldOutput {
    double sdf = 0.0;
    VecX geo_feat;
    Vec3 normal = Vec3::Zero();
    Vec3 color = Vec3::Zero();
};

inline FieldOutput eval_geometry(const FieldParams& p, const Vec3& pos) {
    GeoTrace tr = geo_forward(p, pos, true);
    FieldOutput o;
    o.sdf = tr.sdf(0);
    o.normal = tr.normal(0);
    o.geo_feat = tr.feat(0);
    return o;
}

inline double eval_sdf(const FieldParams& p, const Vec3& pos) {
    return geo_forward(p, pos, false).out(0, 0);
}

inline Vec3 eval_radiance(const FieldParams& p, const Vec3& pos, const Vec3& dir,
                          const Vec3& normal, const VecX& feat) {
    RadTrace tr = rad_forward(p, pos, dir, normal, feat);
    return tr.color.col(0);
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "NSRW", u32 version, u64 param count, raw LE
// float64 scalars in layout order, u32 entry count, then per entry
// u32 name length + name bytes + u64 offset + u64 rows + u64 cols.

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ParseError("truncated checkpoint while reading " + what);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const FieldParams& p) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open checkpoint for writing: " + path);
    os.write("NSRW", 4);
    detail::write_pod<uint32_t>(os, 1);
    detail::write_pod<uint64_t>(os, uint64_t(p.values.size()));
    os.write(reinterpret_cast<const char*>(p.values.data()),
             std::streamsize(sizeof(double) * p.values.size()));
    detail::write_pod<uint32_t>(os, uint32_t(p.layout.size()));
    for (const auto& e : p.layout) {
        detail::write_pod<uint32_t>(os, uint32_t(e.name.size()));
        os.write(e.name.data(), std::streamsize(e.name.size()));
        detail::write_pod<uint64_t>(os, e.offset);
        detail::write_pod<uint64_t>(os, e.rows);
        detail::write_pod<uint64_t>(os, e.cols);
    }
    if (!os) throw ParseError("failed writing checkpoint: " + path);
}

inline FieldParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "NSRW", 4) != 0)
        throw ParseError("bad checkpoint magic in " + path);
    uint32_t version = detail::read_pod<uint32_t>(is, "version");
    if (version != 1) throw ParseError("unsupported checkpoint version in " + path);
    uint64_t count = detail::read_pod<uint64_t>(is, "param count");
    FieldParams p;
    p.values.resize(Eigen::Index(count));
    is.read(reinterpret_cast<char*>(p.values.data()), std::streamsize(sizeof(double) * count));
    if (!is) throw ParseError("truncated checkpoint values in " + path);
    uint32_t n_entries = detail::read_pod<uint32_t>(is, "layout size");
    std::size_t covered = 0;
    for (uint32_t i = 0; i < n_entries; ++i) {
        uint32_t len = detail::read_pod<uint32_t>(is, "name length");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw ParseError("truncated layout name in " + path);
        LayoutEntry e;
        e.name = name;
        e.offset = detail::read_pod<uint64_t>(is, "offset");
        e.rows = detail::read_pod<uint64_t>(is, "rows");
        e.cols = detail::read_pod<uint64_t>(is, "cols");
        covered += e.count();
        p.layout.push_back(e);
    }
    if (covered != count) throw ValidationError("layout does not partition the parameter vector");
    p.rebuild_index();

    // Reconstruct the architecture from the layout.
    FieldConfig cfg;
    cfg.geo_layers = 0;
    cfg.rad_layers = 0;
    for (const auto& e : p.layout) {
        if (e.name.rfind("geo.", 0) == 0 && e.name.size() > 6 &&
            e.name.substr(e.name.size() - 2) == ".W" && e.name != "geo.out.W")
            ++cfg.geo_layers;
        if (e.name.rfind("rad.", 0) == 0 && e.name.substr(e.name.size() - 2) == ".W" &&
            e.name != "rad.out.W")
            ++cfg.rad_layers;
    }
    cfg.geo_hidden = int(p.entry("geo.0.W").rows);
    cfg.geo_feat = int(p.entry("geo.out.W").rows) - 1;
    int enc_pos = int(p.entry("geo.0.W").cols);
    cfg.n_freq_pos = (enc_pos - 3) / 6;
    int rad_in = int(p.entry("rad.0.W").cols);
    int enc_dir = rad_in - 3 - 3 - cfg.geo_feat;
    cfg.n_freq_dir = (enc_dir - 3) / 6;
    cfg.rad_hidden = cfg.rad_layers > 1 ? int(p.entry("rad.0.W").rows) : 0;
    p.cfg = cfg;
    if (cfg.skip_layer() >= 0) {
        const auto& skip = p.entry("geo." + std::to_string(cfg.skip_layer()) + ".W");
        if (int(skip.cols) != cfg.geo_hidden + cfg.enc_pos_dim())
            throw ValidationError("checkpoint skip layer has unexpected width");
    }
    return p;
}

}  // namespace nsr
