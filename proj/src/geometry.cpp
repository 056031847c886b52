#include "clslam/geometry.hpp"

#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace clslam {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::AngleNearPi: return "AngleNearPi";
        case ErrorKind::BehindCamera: return "BehindCamera";
        case ErrorKind::NonPositiveDepth: return "NonPositiveDepth";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::NoSources: return "NoSources";
        case ErrorKind::ZeroMeanDisparity: return "ZeroMeanDisparity";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::GraphNotRecorded: return "GraphNotRecorded";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::SceneTooShort: return "SceneTooShort";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::NotConnected: return "NotConnected";
        case ErrorKind::SolverDiverged: return "SolverDiverged";
        case ErrorKind::FrameMismatch: return "FrameMismatch";
        case ErrorKind::TooShort: return "TooShort";
        case ErrorKind::IncompleteSet: return "IncompleteSet";
        case ErrorKind::NotEnoughScenes: return "NotEnoughScenes";
        case ErrorKind::DegenerateTrajectory: return "DegenerateTrajectory";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::MissingFile: return "MissingFile";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::InconsistentLengths: return "InconsistentLengths";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

Vec6 Twist::as_vector() const {
    Vec6 v;
    v << rotation, translation;
    return v;
}

Twist Twist::from_vector(const Vec6& v) {
    return {v.head<3>(), v.tail<3>()};
}

Pose3::Pose3(const Eigen::Quaterniond& q, const Vec3& t) : q_(q.normalized()), t_(t) {
    if (q_.w() < 0) q_.coeffs() *= -1.0;
}

Pose3::Pose3(const Mat3& r, const Vec3& t) : Pose3(Eigen::Quaterniond(r), t) {}

Mat4 Pose3::matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation();
    m.topRightCorner<3, 1>() = t_;
    return m;
}

Pose3 Pose3::inverse() const {
    const Eigen::Quaterniond qi = q_.conjugate();
    return {qi, -(qi * t_)};
}

double Pose3::angle() const {
    const double w = std::min(1.0, std::abs(q_.w()));
    return 2.0 * std::atan2(q_.vec().norm(), w);
}

std::array<double, 12> Pose3::to_row() const {
    const Mat3 r = rotation();
    std::array<double, 12> row{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) row[4 * i + j] = r(i, j);
        row[4 * i + 3] = t_(i);
    }
    return row;
}

Pose3 Pose3::from_row(const std::array<double, 12>& row) {
    Mat3 r;
    Vec3 t;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) r(i, j) = row[4 * i + j];
        t(i) = row[4 * i + 3];
    }
    // Project onto SO(3) so rows written with limited precision still load.
    Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 ortho = svd.matrixU() * svd.matrixV().transpose();
    if (ortho.determinant() < 0) {
        Mat3 u = svd.matrixU();
        u.col(2) *= -1.0;
        ortho = u * svd.matrixV().transpose();
    }
    return {ortho, t};
}

Pose3 compose(const Pose3& a, const Pose3& b) {
    // Constructor renormalizes the product quaternion.
    return {a.quaternion() * b.quaternion(), a.quaternion() * b.translation() + a.translation()};
}

Pose3 inverse(const Pose3& p) { return p.inverse(); }

Mat3 skew(const Vec3& w) {
    Mat3 m;
    m << 0, -w(2), w(1), w(2), 0, -w(0), -w(1), w(0), 0;
    return m;
}

Pose3 se3_exp(const Twist& xi) {
    Mat3 r;
    Vec3 t;
    se3_exp_matrices<double>(xi.rotation, xi.translation, r, t);
    const double theta = xi.rotation.norm();
    Eigen::Quaterniond q;
    if (theta < kSmallAngle) {
        q = Eigen::Quaterniond(1.0, 0.5 * xi.rotation.x(), 0.5 * xi.rotation.y(),
                               0.5 * xi.rotation.z());
    } else {
        q = Eigen::Quaterniond(Eigen::AngleAxisd(theta, xi.rotation / theta));
    }
    return {q, t};
}

Twist se3_log(const Pose3& pose) {
    const double theta = pose.angle();
    if (theta >= std::numbers::pi - 1e-6) {
        throw Error(ErrorKind::AngleNearPi, "rotation angle " + std::to_string(theta));
    }
    const Eigen::Quaterniond& q = pose.quaternion();  // w >= 0 by construction
    const double vn = q.vec().norm();
    Vec3 w;
    if (theta < kSmallAngle) {
        w = (2.0 / q.w()) * (1.0 - vn * vn / (3.0 * q.w() * q.w())) * q.vec();
    } else {
        w = (theta / vn) * q.vec();
    }
    const Mat3 wx = skew(w);
    double coeff;
    if (theta < kSmallAngle) {
        coeff = 1.0 / 12.0 + theta * theta / 720.0;
    } else {
        const double half = 0.5 * theta;
        coeff = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
    }
    const Mat3 v_inv = Mat3::Identity() - 0.5 * wx + coeff * wx * wx;
    return {w, v_inv * pose.translation()};
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0 && fy > 0)) throw Error(ErrorKind::InvalidArgument, "focal lengths must be positive");
    if (!(cx >= 0 && cx < width && cy >= 0 && cy < height)) {
        throw Error(ErrorKind::InvalidArgument, "principal point outside image");
    }
}

Mat3 CameraIntrinsics::matrix() const {
    Mat3 k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
}

Vec2 project_point(const Vec3& p, const CameraIntrinsics& k) {
    if (!(p.z() > 0)) throw Error(ErrorKind::BehindCamera, "z = " + std::to_string(p.z()));
    return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

Vec3 unproject_pixel(const Vec2& p, double depth, const CameraIntrinsics& k) {
    if (!(depth > 0)) throw Error(ErrorKind::NonPositiveDepth, "depth = " + std::to_string(depth));
    return {depth * (p.x() - k.cx) / k.fx, depth * (p.y() - k.cy) / k.fy, depth};
}

Trajectory::Trajectory(std::vector<StampedPose> poses) {
    for (auto& p : poses) push_back(p.timestamp, p.pose);
}

void Trajectory::push_back(double timestamp, const Pose3& pose) {
    if (!poses_.empty() && !(timestamp > poses_.back().timestamp)) {
        throw Error(ErrorKind::InvalidArgument, "trajectory timestamps must strictly increase");
    }
    poses_.push_back({timestamp, pose});
}

std::vector<Pose3> Trajectory::pose_list() const {
    std::vector<Pose3> out;
    out.reserve(poses_.size());
    for (const auto& p : poses_) out.push_back(p.pose);
    return out;
}

std::string format_pose_row(const Pose3& p) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10);
    const auto row = p.to_row();
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) os << ' ';
        os << row[i];
    }
    return os.str();
}

void write_pose_rows(std::ostream& os, const std::vector<Pose3>& poses) {
    for (const auto& p : poses) os << format_pose_row(p) << '\n';
}

std::vector<Pose3> read_pose_rows(std::istream& is) {
    std::vector<Pose3> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        std::array<double, 12> row{};
        for (auto& v : row) {
            if (!(ls >> v)) throw Error(ErrorKind::ParseError, "pose row needs 12 numbers: " + line);
        }
        double extra;
        if (ls >> extra) throw Error(ErrorKind::ParseError, "pose row has more than 12 numbers: " + line);
        out.push_back(Pose3::from_row(row));
    }
    return out;
}

}  // namespace clslam
