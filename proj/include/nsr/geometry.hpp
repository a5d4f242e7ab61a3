#pragma once

#include <cmath>

#include "nsr/common.hpp"

namespace nsr {

struct Camera {
    Mat3 K;      // intrinsics, pixels; K(2,2) == 1
    Mat3 R;      // world-to-camera rotation
    Vec3 t;      // translation, world units; p_cam = R p + t
    int width = 0;
    int height = 0;

    Vec3 center() const { return -R.transpose() * t; }

    void validate() const {
        if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() >= 1e-6)
            throw ValidationError("camera rotation is not orthonormal");
        if (std::abs(R.determinant() - 1.0) >= 1e-6)
            throw ValidationError("camera rotation determinant != 1");
        if (std::abs(K(2, 2) - 1.0) > 1e-12 || K(0, 0) <= 0 || K(1, 1) <= 0)
            throw ValidationError("malformed intrinsics");
        if (width <= 0 || height <= 0) throw ValidationError("empty image size");
    }
};

struct Ray {
    Vec3 o;         // camera center
    Vec3 v;         // unit direction
    double t_near = 0.0;
    double t_far = 0.0;

    Vec3 at(double t) const { return o + t * v; }
};

// Plane n.p + d = 0 in world coordinates, n unit.
struct TangentPlane {
    Vec3 n;
    double d = 0.0;

    static TangentPlane through(const Vec3& n_unit, const Vec3& p) {
        return TangentPlane{n_unit, -n_unit.dot(p)};
    }

    // Signed distance from the reference camera center to the plane; this is
    // the d that enters the homography.
    double offset_from(const Vec3& cam_center) const { return d + n.dot(cam_center); }
};

// Pixel coordinate convention: integer coordinates sit at pixel centers, so
// valid image coordinates span [-0.5, W-0.5] x [-0.5, H-0.5].

inline Vec2 project(const Camera& cam, const Vec3& p) {
    Vec3 pc = cam.R * p + cam.t;
    if (pc.z() <= 0.0) throw BehindCamera("point has non-positive depth");
    Vec3 x = cam.K * pc;
    return Vec2(x.x() / x.z(), x.y() / x.z());
}

inline bool in_image(const Camera& cam, const Vec2& x) {
    return x.x() >= -0.5 && x.x() <= cam.width - 0.5 && x.y() >= -0.5 &&
           x.y() <= cam.height - 0.5;
}

// Back-projects a pixel; ray bounds come from intersecting the unit sphere.
inline Ray pixel_to_ray(const Camera& cam, const Vec2& x) {
    Vec3 dir = cam.R.transpose() * (cam.K.inverse() * Vec3(x.x(), x.y(), 1.0));
    dir.normalize();
    Vec3 o = cam.center();
    // |o + t v|^2 = 1
    double b = o.dot(dir);
    double c = o.squaredNorm() - 1.0;
    double disc = b * b - c;
    if (disc <= 0.0) throw RayMissesBounds("ray misses the unit sphere");
    double s = std::sqrt(disc);
    double t0 = -b - s, t1 = -b + s;
    if (t1 <= 0.0) throw RayMissesBounds("unit sphere behind camera");
    if (t0 <= 0.0) t0 = 1e-6;  // camera inside the sphere
    return Ray{o, dir, t0, t1};
}

// Plane-induced homography mapping homogeneous reference pixels to source
// pixels:  H = K_s R_s (I - B n^T / d) R_r^-1 K_r^-1, with
// B = R_s^-1 t_s - R_r^-1 t_r and d the distance from the reference camera
// center to the plane.
inline Mat3 homography_unnormalized(const Camera& ref, const Camera& src,
                                    const TangentPlane& plane) {
    double d = plane.offset_from(ref.center());
    if (std::abs(d) <= 1e-9) throw DegeneratePlane("plane passes through reference camera center");
    Vec3 B = src.R.transpose() * src.t - ref.R.transpose() * ref.t;
    Mat3 mid = Mat3::Identity() - (B * plane.n.transpose()) / d;
    return src.K * src.R * mid * ref.R.transpose() * ref.K.inverse();
}

inline Mat3 homography(const Camera& ref, const Camera& src, const TangentPlane& plane) {
    Mat3 H = homography_unnormalized(ref, src, plane);
    if (std::abs(H(2, 2)) > 1e-12) H /= H(2, 2);
    return H;
}

// d(H)/d(plane.d): the homography depends on the plane offset only through
// the -B n^T / d term.
inline Mat3 homography_d_offset(const Camera& ref, const Camera& src,
                                const TangentPlane& plane) {
    double d = plane.offset_from(ref.center());
    Vec3 B = src.R.transpose() * src.t - ref.R.transpose() * ref.t;
    Mat3 mid = (B * plane.n.transpose()) / (d * d);
    return src.K * src.R * mid * ref.R.transpose() * ref.K.inverse();
}

inline Vec2 apply_homography(const Mat3& H, const Vec2& x) {
    Vec3 y = H * Vec3(x.x(), x.y(), 1.0);
    return Vec2(y.x() / y.z(), y.y() / y.z());
}

}  // namespace nsr
