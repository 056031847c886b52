#include <numbers>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "clslam/geometry.hpp"
#include "clslam/rng.hpp"
#include "doctest.h"

using namespace clslam;

namespace {

Twist random_twist(Rng& rng, double max_angle = 3.0) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    return {axis * rng.uniform(0.0, max_angle), Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5))};
}

Mat4 twist_hat(const Twist& xi) {
    Mat4 m = Mat4::Zero();
    m.topLeftCorner<3, 3>() = skew(xi.rotation);
    m.topRightCorner<3, 1>() = xi.translation;
    return m;
}

double max_abs_diff(const Mat4& a, const Mat4& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("se3_exp of zero twist is identity") {
    const Pose3 p = se3_exp(Twist{});
    CHECK(max_abs_diff(p.matrix(), Mat4::Identity()) == 0.0);
}

TEST_CASE("se3_exp quarter turn about z matches the dense matrix exponential") {
    const Twist xi{Vec3(0, 0, std::numbers::pi / 2), Vec3::Zero()};
    const Mat4 oracle = twist_hat(xi).exp();
    const Pose3 p = se3_exp(xi);
    CHECK(max_abs_diff(p.matrix(), oracle) < 1e-12);
    Mat3 expected;
    expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    CHECK((p.rotation() - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(p.translation().norm() < 1e-12);
}

TEST_CASE("se3_exp agrees with the dense matrix exponential on random twists") {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        const Twist xi = random_twist(rng);
        CHECK(max_abs_diff(se3_exp(xi).matrix(), twist_hat(xi).exp()) < 1e-9);
    }
    // Inside the small-angle branch.
    const Twist tiny{Vec3(3e-9, -2e-9, 1e-9), Vec3(1, 2, 3)};
    CHECK(max_abs_diff(se3_exp(tiny).matrix(), twist_hat(tiny).exp()) < 1e-12);
}

TEST_CASE("se3_exp of pure translation") {
    const Pose3 p = se3_exp({Vec3::Zero(), Vec3(1, 2, 3)});
    CHECK(p.angle() == 0.0);
    CHECK((p.translation() - Vec3(1, 2, 3)).norm() == 0.0);
}

TEST_CASE("se3_log inverts se3_exp") {
    CHECK(se3_log(Pose3::identity()).as_vector().norm() == 0.0);

    const Twist xi{Vec3(0, 0, 0.3), Vec3(0.1, 0, 0)};
    CHECK((se3_log(se3_exp(xi)).as_vector() - xi.as_vector()).cwiseAbs().maxCoeff() < 1e-12);

    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        const Twist t = random_twist(rng, std::numbers::pi - 1e-3);
        const Pose3 p = se3_exp(t);
        const Pose3 back = se3_exp(se3_log(p));
        CHECK(max_abs_diff(back.matrix(), p.matrix()) < 1e-9);
    }
}

TEST_CASE("se3_log rejects angles near pi") {
    const Pose3 p = se3_exp({Vec3(std::numbers::pi - 1e-8, 0, 0), Vec3::Zero()});
    try {
        (void)se3_log(p);
        FAIL("expected AngleNearPi");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::AngleNearPi);
    }
}

TEST_CASE("compose satisfies the group axioms") {
    Rng rng(3);
    const Pose3 t = se3_exp(random_twist(rng));
    CHECK(max_abs_diff(compose(Pose3::identity(), t).matrix(), t.matrix()) < 1e-15);
    CHECK(max_abs_diff(compose(t, inverse(t)).matrix(), Mat4::Identity()) < 1e-9);

    const Pose3 z1 = se3_exp({Vec3::Zero(), Vec3(0, 0, 1)});
    CHECK((compose(z1, z1).translation() - Vec3(0, 0, 2)).norm() < 1e-15);

    for (int i = 0; i < 100; ++i) {
        const Pose3 a = se3_exp(random_twist(rng));
        const Pose3 b = se3_exp(random_twist(rng));
        const Pose3 c = se3_exp(random_twist(rng));
        CHECK(max_abs_diff(((a * b) * c).matrix(), (a * (b * c)).matrix()) < 1e-9);
        CHECK(max_abs_diff((a * inverse(a)).matrix(), Mat4::Identity()) < 1e-9);
        const Mat3 r = (a * b).rotation();
        CHECK((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(std::abs(r.determinant() - 1.0) < 1e-9);
        CHECK(std::abs((a * b).quaternion().norm() - 1.0) < 1e-9);
    }
}

TEST_CASE("pinhole projection") {
    const CameraIntrinsics k{100, 100, 40, 30, 80, 60};
    CHECK((project_point(Vec3(0, 0, 2), k) - Vec2(40, 30)).norm() == 0.0);
    CHECK((project_point(Vec3(0.2, 0, 2), k) - Vec2(50, 30)).norm() < 1e-12);
    CHECK_THROWS_AS(project_point(Vec3(0, 0, -1), k), Error);
    try {
        project_point(Vec3(0, 0, -1), k);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::BehindCamera);
    }
}

TEST_CASE("unprojection inverts projection") {
    const CameraIntrinsics k{100, 100, 40, 30, 80, 60};
    CHECK((unproject_pixel(Vec2(40, 30), 2.0, k) - Vec3(0, 0, 2)).norm() == 0.0);
    try {
        unproject_pixel(Vec2(1, 1), 0.0, k);
        FAIL("expected NonPositiveDepth");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NonPositiveDepth);
    }
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const Vec2 px(rng.uniform(0, 80), rng.uniform(0, 60));
        const double d = rng.uniform(0.1, 100);
        CHECK((project_point(unproject_pixel(px, d, k), k) - px).norm() < 1e-9);
    }
}

TEST_CASE("pose rows round-trip through text") {
    Rng rng(9);
    std::vector<Pose3> poses;
    for (int i = 0; i < 10; ++i) poses.push_back(se3_exp(random_twist(rng)));
    std::stringstream ss;
    write_pose_rows(ss, poses);
    const auto back = read_pose_rows(ss);
    REQUIRE(back.size() == poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) CHECK(max_abs_diff(back[i].matrix(), poses[i].matrix()) < 1e-12);

    std::stringstream bad("1 2 3\n");
    CHECK_THROWS_AS(read_pose_rows(bad), Error);
}

TEST_CASE("trajectory timestamps must increase") {
    Trajectory t;
    t.push_back(0.0, Pose3::identity());
    t.push_back(0.1, Pose3::identity());
    CHECK_THROWS_AS(t.push_back(0.1, Pose3::identity()), Error);
    CHECK(t.size() == 2);
}
