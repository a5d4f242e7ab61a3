#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace nsr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Base for all error conditions raised by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct RayMissesBounds : Error {
    using Error::Error;
};
struct BehindCamera : Error {
    using Error::Error;
};
struct DegeneratePlane : Error {
    using Error::Error;
};
struct OutOfImage : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct ValidationError : Error {
    using Error::Error;
};
struct EmptySurface : Error {
    using Error::Error;
};
struct EmptySet : Error {
    using Error::Error;
};
struct ShapeTooLarge : Error {
    using Error::Error;
};
struct TapeConsumed : Error {
    using Error::Error;
};

}  // namespace nsr
