#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/field.hpp"

namespace nsr {

// One view's C x H_f x W_f feature grid. Feature resolution may be reduced
// relative to the originating image; sampling maps image coordinates to the
// feature grid.
struct FeatureMap {
    int channels = 0;
    int feat_h = 0;
    int feat_w = 0;
    int width = 0;   // originating image size, pixels
    int height = 0;
    std::vector<double> data;  // channel-major, row-major per channel

    double& at(int c, int y, int x) { return data[(std::size_t(c) * feat_h + y) * feat_w + x]; }
    double at(int c, int y, int x) const {
        return data[(std::size_t(c) * feat_h + y) * feat_w + x];
    }

    void validate(const std::string& what) const {
        if (channels <= 0 || feat_h <= 0 || feat_w <= 0 || width <= 0 || height <= 0)
            throw ValidationError(what + ": empty feature map");
        if (feat_h > height || feat_w > width)
            throw ValidationError(what + ": feature resolution exceeds image resolution");
        if (data.size() != std::size_t(channels) * feat_h * feat_w)
            throw ValidationError(what + ": feature data size mismatch");
        for (double v : data)
            if (!std::isfinite(v)) throw ValidationError(what + ": non-finite feature value");
    }
};

// Bilinear sample at image coordinate x (integer coordinates are pixel
// centers). Throws OutOfImage outside [-0.5, W-0.5] x [-0.5, H-0.5].
// Optionally returns the derivative w.r.t. the image coordinates.
inline void sample_feature_into(const FeatureMap& fm, const Vec2& x, Eigen::Ref<VecX> out,
                                VecX* dfdu = nullptr, VecX* dfdv = nullptr) {
    if (x.x() < -0.5 || x.x() > fm.width - 0.5 || x.y() < -0.5 || x.y() > fm.height - 0.5)
        throw OutOfImage("feature sample outside the image");
    const double su = double(fm.feat_w) / double(fm.width);
    const double sv = double(fm.feat_h) / double(fm.height);
    double uf = (x.x() + 0.5) * su - 0.5;
    double vf = (x.y() + 0.5) * sv - 0.5;
    bool clamped_u = uf <= 0.0 || uf >= fm.feat_w - 1;
    bool clamped_v = vf <= 0.0 || vf >= fm.feat_h - 1;
    uf = std::min(std::max(uf, 0.0), double(fm.feat_w - 1));
    vf = std::min(std::max(vf, 0.0), double(fm.feat_h - 1));
    int x0 = std::min(int(uf), fm.feat_w > 1 ? fm.feat_w - 2 : 0);
    int y0 = std::min(int(vf), fm.feat_h > 1 ? fm.feat_h - 2 : 0);
    int x1 = std::min(x0 + 1, fm.feat_w - 1);
    int y1 = std::min(y0 + 1, fm.feat_h - 1);
    double fx = uf - x0, fy = vf - y0;
    if (dfdu) dfdu->setZero(fm.channels);
    if (dfdv) dfdv->setZero(fm.channels);
    for (int c = 0; c < fm.channels; ++c) {
        double v00 = fm.at(c, y0, x0), v10 = fm.at(c, y0, x1);
        double v01 = fm.at(c, y1, x0), v11 = fm.at(c, y1, x1);
        double top = v00 + fx * (v10 - v00);
        double bot = v01 + fx * (v11 - v01);
        out[c] = top + fy * (bot - top);
        if (dfdu && !clamped_u)
            (*dfdu)[c] = ((v10 - v00) + fy * ((v11 - v01) - (v10 - v00))) * su;
        if (dfdv && !clamped_v) (*dfdv)[c] = (bot - top) * sv;
    }
}

inline VecX sample_feature(const FeatureMap& fm, const Vec2& x, VecX* dfdu = nullptr,
                           VecX* dfdv = nullptr) {
    VecX out(fm.channels);
    sample_feature_into(fm, x, out, dfdu, dfdv);
    return out;
}

// Feature file format: magic "NSRF", u32 version = 1, u32 C, u32 H_f, u32 W_f,
// u32 W, u32 H, then C*H_f*W_f little-endian float32 in channel-major,
// row-major order.
inline void save_feature_map(const std::string& path, const FeatureMap& fm) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open feature file for writing: " + path);
    os.write("NSRF", 4);
    detail::write_pod<uint32_t>(os, 1);
    detail::write_pod<uint32_t>(os, uint32_t(fm.channels));
    detail::write_pod<uint32_t>(os, uint32_t(fm.feat_h));
    detail::write_pod<uint32_t>(os, uint32_t(fm.feat_w));
    detail::write_pod<uint32_t>(os, uint32_t(fm.width));
    detail::write_pod<uint32_t>(os, uint32_t(fm.height));
    for (double v : fm.data) {
        float f = float(v);
        os.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
    if (!os) throw ParseError("failed writing feature file: " + path);
}

inline FeatureMap load_feature_map(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open feature file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "NSRF", 4) != 0)
        throw ParseError("bad feature file magic in " + path);
    uint32_t version = detail::read_pod<uint32_t>(is, "version");
    if (version != 1) throw ParseError("unsupported feature file version in " + path);
    FeatureMap fm;
    fm.channels = int(detail::read_pod<uint32_t>(is, "channels"));
    fm.feat_h = int(detail::read_pod<uint32_t>(is, "feat height"));
    fm.feat_w = int(detail::read_pod<uint32_t>(is, "feat width"));
    fm.width = int(detail::read_pod<uint32_t>(is, "width"));
    fm.height = int(detail::read_pod<uint32_t>(is, "height"));
    std::size_t n = std::size_t(fm.channels) * fm.feat_h * fm.feat_w;
    fm.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        float f;
        is.read(reinterpret_cast<char*>(&f), sizeof(float));
        if (!is) throw ParseError("truncated feature data in " + path);
        fm.data[i] = double(f);
    }
    fm.validate(path);
    return fm;
}

}  // namespace nsr
