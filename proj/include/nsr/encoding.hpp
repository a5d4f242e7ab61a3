#pragma once

#include <cmath>

#include "nsr/common.hpp"

namespace nsr {

inline int encoded_dim(int k, int n_freq) { return k + 2 * k * n_freq; }

// [p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{n-1} pi p), cos(2^{n-1} pi p)]
inline void positional_encoding_into(const VecX& p, int n_freq, Eigen::Ref<VecX> out) {
    const int k = int(p.size());
    out.head(k) = p;
    double w = M_PI;
    for (int f = 0; f < n_freq; ++f, w *= 2.0) {
        for (int i = 0; i < k; ++i) {
            out[k + 2 * k * f + i] = std::sin(w * p[i]);
            out[k + 2 * k * f + k + i] = std::cos(w * p[i]);
        }
    }
}

inline VecX positional_encoding(const VecX& p, int n_freq) {
    VecX out(encoded_dim(int(p.size()), n_freq));
    positional_encoding_into(p, n_freq, out);
    return out;
}

// Dual variant for 3-vectors: returns E x 4, column 0 the value and columns
// 1..3 the derivative w.r.t. the point coordinates.
inline MatX positional_encoding_dual3(const Vec3& p, int n_freq) {
    const int k = 3;
    MatX out = MatX::Zero(encoded_dim(k, n_freq), 4);
    for (int i = 0; i < k; ++i) {
        out(i, 0) = p[i];
        out(i, 1 + i) = 1.0;
    }
    double w = M_PI;
    for (int f = 0; f < n_freq; ++f, w *= 2.0) {
        for (int i = 0; i < k; ++i) {
            double s = std::sin(w * p[i]), c = std::cos(w * p[i]);
            int rs = k + 2 * k * f + i;
            int rc = rs + k;
            out(rs, 0) = s;
            out(rs, 1 + i) = w * c;
            out(rc, 0) = c;
            out(rc, 1 + i) = -w * s;
        }
    }
    return out;
}

}  // namespace nsr
