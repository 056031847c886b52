#pragma once

#include <array>
#include <cmath>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "clslam/error.hpp"

namespace clslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Tangent vector of SE(3): rotation part (axis-angle, radians) and
/// translation part (meters). Ordered (rotation, translation) when flattened.
struct Twist {
    Vec3 rotation = Vec3::Zero();
    Vec3 translation = Vec3::Zero();

    Vec6 as_vector() const;
    static Twist from_vector(const Vec6& v);
};

/// Rigid transform stored as a unit quaternion and a translation.
class Pose3 {
public:
    Pose3() = default;
    Pose3(const Eigen::Quaterniond& q, const Vec3& t);
    Pose3(const Mat3& r, const Vec3& t);

    static Pose3 identity() { return {}; }

    const Eigen::Quaterniond& quaternion() const { return q_; }
    Mat3 rotation() const { return q_.toRotationMatrix(); }
    const Vec3& translation() const { return t_; }
    Mat4 matrix() const;

    Pose3 inverse() const;
    Vec3 transform(const Vec3& p) const { return q_ * p + t_; }

    /// Rotation angle in [0, pi].
    double angle() const;

    /// Row-major 3x4 [R|t], the KITTI odometry pose row.
    std::array<double, 12> to_row() const;
    static Pose3 from_row(const std::array<double, 12>& row);

private:
    Eigen::Quaterniond q_ = Eigen::Quaterniond::Identity();
    Vec3 t_ = Vec3::Zero();
};

Pose3 compose(const Pose3& a, const Pose3& b);
inline Pose3 operator*(const Pose3& a, const Pose3& b) { return compose(a, b); }
Pose3 inverse(const Pose3& p);

Pose3 se3_exp(const Twist& xi);
/// Throws AngleNearPi when the rotation angle is >= pi - 1e-6.
Twist se3_log(const Pose3& pose);

Mat3 skew(const Vec3& w);

inline constexpr double kSmallAngle = 1e-8;

/// SE(3) exponential on any Eigen-compatible scalar (used with
/// Eigen::AutoDiffScalar to differentiate the pose head output).
template <typename Scalar>
void se3_exp_matrices(const Eigen::Matrix<Scalar, 3, 1>& w, const Eigen::Matrix<Scalar, 3, 1>& rho,
                      Eigen::Matrix<Scalar, 3, 3>& r, Eigen::Matrix<Scalar, 3, 1>& t) {
    using std::cos;
    using std::sin;
    using std::sqrt;
    using M3 = Eigen::Matrix<Scalar, 3, 3>;
    M3 wx;
    wx << Scalar(0), -w(2), w(1), w(2), Scalar(0), -w(0), -w(1), w(0), Scalar(0);
    const M3 wx2 = wx * wx;
    const Scalar theta_sq = w.squaredNorm();
    Scalar a, b, c;
    if (theta_sq < Scalar(kSmallAngle * kSmallAngle)) {
        a = Scalar(1) - theta_sq / Scalar(6);
        b = Scalar(0.5) - theta_sq / Scalar(24);
        c = Scalar(1.0 / 6.0) - theta_sq / Scalar(120);
    } else {
        const Scalar theta = sqrt(theta_sq);
        const Scalar s = sin(theta);
        const Scalar co = cos(theta);
        a = s / theta;
        b = (Scalar(1) - co) / theta_sq;
        c = (theta - s) / (theta_sq * theta);
    }
    const M3 id = M3::Identity();
    r = id + a * wx + b * wx2;
    t = (id + b * wx + c * wx2) * rho;
}

struct CameraIntrinsics {
    double fx = 0;
    double fy = 0;
    double cx = 0;
    double cy = 0;
    int width = 0;
    int height = 0;

    /// Throws InvalidArgument when the invariants are violated.
    void validate() const;
    Mat3 matrix() const;
};

/// Pinhole projection; throws BehindCamera when z <= 0.
Vec2 project_point(const Vec3& p, const CameraIntrinsics& k);
/// d * K^-1 [u v 1]; throws NonPositiveDepth when d <= 0.
Vec3 unproject_pixel(const Vec2& p, double depth, const CameraIntrinsics& k);

struct StampedPose {
    double timestamp = 0;
    Pose3 pose;
};

/// Timestamped pose sequence; timestamps strictly increasing.
class Trajectory {
public:
    Trajectory() = default;
    explicit Trajectory(std::vector<StampedPose> poses);

    void push_back(double timestamp, const Pose3& pose);
    std::size_t size() const { return poses_.size(); }
    bool empty() const { return poses_.empty(); }
    const StampedPose& operator[](std::size_t i) const { return poses_[i]; }
    const std::vector<StampedPose>& poses() const { return poses_; }
    std::vector<Pose3> pose_list() const;

private:
    std::vector<StampedPose> poses_;
};

void write_pose_rows(std::ostream& os, const std::vector<Pose3>& poses);
std::vector<Pose3> read_pose_rows(std::istream& is);
std::string format_pose_row(const Pose3& p);

}  // namespace clslam
