#include <cmath>
#include <memory>

#include "clslam/photometric.hpp"
#include "clslam/rng.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace clslam;
using clslam::testing::smooth_random_image;

namespace {

const CameraIntrinsics kCam{30, 30, 16, 12, 32, 24};

DepthMap constant_depth(int h, int w, double d) { return DepthMap(Grid(h, w, d)); }

double max_abs(const Grid& a) {
    double m = 0;
    for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace

TEST_CASE("identity warp reproduces the source exactly") {
    const Image src = smooth_random_image(24, 32, 1);
    const WarpResult w = warp_image(src, constant_depth(24, 32, 3.7), Pose3::identity(), kCam);
    CHECK(w.valid.all());
    double err = 0;
    for (std::size_t i = 0; i < src.size(); ++i) err = std::max(err, std::abs(w.image[i] - src[i]));
    CHECK(err < 1e-12);
}

TEST_CASE("warp marks points moved behind the camera invalid") {
    const Image src = smooth_random_image(24, 32, 2);
    const Pose3 back(Eigen::Quaterniond::Identity(), Vec3(0, 0, -50));
    const WarpResult w = warp_image(src, constant_depth(24, 32, 5.0), back, kCam);
    CHECK(w.valid.none());
}

TEST_CASE("warp rejects mismatched inputs") {
    const Image src = smooth_random_image(24, 32, 2);
    try {
        warp_image(src, constant_depth(20, 32, 1.0), Pose3::identity(), kCam);
        FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DimensionMismatch);
    }
}

TEST_CASE("warp backward matches finite differences") {
    const Image src = smooth_random_image(24, 32, 3);
    const Image tgt = smooth_random_image(24, 32, 4);
    Rng rng(21);
    DepthMap depth(24, 32);
    for (auto& d : depth.values()) d = rng.uniform(2.0, 6.0);
    const Twist xi{Vec3(0.01, -0.02, 0.015), Vec3(0.05, -0.02, 0.2)};
    Grid up(24, 32);
    for (auto& v : up.values()) v = rng.uniform(-1, 1);

    auto loss = [&](const DepthMap& d, const Pose3& p) {
        const WarpResult w = warp_image(src, d, p, kCam);
        double s = 0;
        for (std::size_t i = 0; i < up.size(); ++i) s += up[i] * (w.image[i] - tgt[i]);
        return s;
    };
    const Pose3 pose = se3_exp(xi);
    const WarpGradient g = warp_image_backward(src, depth, pose, kCam, up);

    const double h = 1e-6;
    for (std::size_t i : {5u, 100u, 333u, 500u}) {
        DepthMap dp = depth, dm = depth;
        dp[i] += h;
        dm[i] -= h;
        const double fd = (loss(dp, pose) - loss(dm, pose)) / (2 * h);
        CHECK(std::abs(fd - g.depth[i]) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
    for (int a = 0; a < 3; ++a) {
        Vec3 tp = pose.translation(), tm = pose.translation();
        tp(a) += h;
        tm(a) -= h;
        const double fd = (loss(depth, Pose3(pose.quaternion(), tp)) - loss(depth, Pose3(pose.quaternion(), tm))) / (2 * h);
        CHECK(std::abs(fd - g.translation(a)) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("ssim basics") {
    const Image a = smooth_random_image(16, 20, 5);
    const Image b = smooth_random_image(16, 20, 6);
    const Grid self = ssim(a, a);
    for (double v : self.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

    const Image zeros(Grid(8, 8, 0.0));
    const Image ones(Grid(8, 8, 1.0));
    const double c1 = 1e-4;
    const Grid s01 = ssim(zeros, ones);
    for (double v : s01.values()) CHECK(v == doctest::Approx(c1 / (1 + c1)).epsilon(1e-12));
    CHECK(c1 / (1 + c1) == doctest::Approx(9.999e-5).epsilon(1e-4));

    const Grid ab = ssim(a, b);
    const Grid ba = ssim(b, a);
    for (std::size_t i = 0; i < ab.size(); ++i) {
        CHECK(ab[i] == doctest::Approx(ba[i]).epsilon(1e-14));
        CHECK(ab[i] <= 1.0 + 1e-12);
        CHECK(ab[i] >= -1.0 - 1e-12);
    }
    CHECK_THROWS_AS(ssim(a, zeros), Error);
}

TEST_CASE("ssim and dissimilarity backward match finite differences") {
    const Image a = smooth_random_image(12, 14, 7);
    Image b = smooth_random_image(12, 14, 8);
    Rng rng(2);
    Grid up(12, 14);
    for (auto& v : up.values()) v = rng.uniform(-1, 1);
    auto weighted = [&](const Grid& m) {
        double s = 0;
        for (std::size_t i = 0; i < m.size(); ++i) s += up[i] * m[i];
        return s;
    };
    const Grid gs = ssim_backward(a, b, up);
    const Grid gd = photometric_dissimilarity_backward(a, b, 0.85, up);
    const double h = 1e-6;
    for (std::size_t i = 0; i < b.size(); i += 7) {
        Image bp = b, bm = b;
        bp[i] += h;
        bm[i] -= h;
        const double fs = (weighted(ssim(a, bp)) - weighted(ssim(a, bm))) / (2 * h);
        CHECK(fs == doctest::Approx(gs[i]).epsilon(1e-6));
        const double fd = (weighted(photometric_dissimilarity(a, bp, 0.85)) -
                           weighted(photometric_dissimilarity(a, bm, 0.85))) / (2 * h);
        CHECK(fd == doctest::Approx(gd[i]).epsilon(1e-6));
    }
}

TEST_CASE("photometric dissimilarity") {
    const Image a = smooth_random_image(10, 12, 9);
    CHECK(max_abs(photometric_dissimilarity(a, a, 0.85)) < 1e-12);

    const Image c0(Grid(10, 12, 0.2));
    const Image c1(Grid(10, 12, 0.5));
    const Grid d01 = photometric_dissimilarity(c0, c1, 0.0);
    for (double v : d01.values()) CHECK(v == doctest::Approx(0.3));

    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        Image n1(10, 12), n2(10, 12);
        for (auto& v : n1.values()) v = rng.uniform();
        for (auto& v : n2.values()) v = rng.uniform();
        const Grid d = photometric_dissimilarity(n1, n2, 1.0);
        for (double v : d.values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("auto-mask rejects a perfectly static triplet") {
    const Image img = smooth_random_image(12, 16, 10);
    const std::array<Image, 2> src{img, img};
    const std::array<Image, 2> warped{img, img};
    const ReprojectionResult r = reprojection_loss(img, src, warped, {}, LossWeights{});
    CHECK(r.mask.none());
    CHECK(r.loss == 0.0);
}

TEST_CASE("perfect reconstruction keeps every pixel and costs nothing") {
    const Image tgt = smooth_random_image(12, 16, 11);
    const std::array<Image, 2> src{smooth_random_image(12, 16, 12), smooth_random_image(12, 16, 13)};
    const std::array<Image, 2> warped{tgt, tgt};
    const ReprojectionResult r = reprojection_loss(tgt, src, warped, {}, LossWeights{});
    CHECK(r.mask.all());
    CHECK(r.loss == 0.0);
}

TEST_CASE("per-pixel minimum prefers the cleaner source") {
    const int h = 12, w = 16;
    const Image tgt = smooth_random_image(h, w, 14);
    Image inv(h, w);
    for (std::size_t i = 0; i < tgt.size(); ++i) inv[i] = 1.0 - tgt[i];
    Image left = tgt, right = tgt;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w / 2; ++c) left(r, c) = 0.5 * left(r, c);
        for (int c = w / 2; c < w; ++c) right(r, c) = 1.0 - right(r, c);
    }
    const std::array<Image, 2> sources{inv, inv};
    const std::array<Image, 2> both{left, right};
    const LossWeights lw;
    const ReprojectionResult rb = reprojection_loss(tgt, sources, both, {}, lw);
    const ReprojectionResult rl = reprojection_loss(tgt, std::span(sources).first(1), std::span(both).first(1), {}, lw);
    const ReprojectionResult rr = reprojection_loss(tgt, std::span(sources).last(1), std::span(both).last(1), {}, lw);
    CHECK(rb.mask.all());
    CHECK(rb.loss <= rl.loss);
    CHECK(rb.loss <= rr.loss);
    for (std::size_t i = 0; i < tgt.size(); ++i) {
        CHECK(rb.min_error[i] <= rb.warped_errors[0][i]);
        CHECK(rb.min_error[i] <= rb.warped_errors[1][i]);
    }
    CHECK_THROWS_AS(reprojection_loss(tgt, {}, {}, {}, lw), Error);
}

TEST_CASE("invalid warped pixels are excluded from the minimum") {
    const Image tgt = smooth_random_image(8, 8, 15);
    Image far(8, 8);
    for (std::size_t i = 0; i < far.size(); ++i) far[i] = 1.0 - tgt[i];
    const std::array<Image, 1> src{far};
    const std::array<Image, 1> warped{tgt};
    const std::array<Mask, 1> none{Mask(8, 8, false)};
    const ReprojectionResult r = reprojection_loss(tgt, src, warped, none, LossWeights{});
    CHECK(r.mask.none());
    CHECK(r.selected[0] == -1);
}

TEST_CASE("smoothness loss") {
    const Image flat(Grid(4, 4, 0.5));
    CHECK(smoothness_loss(DisparityMap(Grid(4, 4, 2.0)), flat) == 0.0);

    // Ramp S = 1 + c: every horizontal difference is 1, mean is 2.5,
    // vertical differences vanish, so the loss is 1 / 2.5.
    DisparityMap ramp(4, 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) ramp(r, c) = 1.0 + c;
    CHECK(smoothness_loss(ramp, flat) == doctest::Approx(0.4).epsilon(1e-14));

    DisparityMap scaled = ramp;
    for (auto& v : scaled.values()) v *= 10.0;
    CHECK(smoothness_loss(scaled, flat) == doctest::Approx(0.4).epsilon(1e-14));
}

TEST_CASE("smoothness backward matches finite differences") {
    const Image img = smooth_random_image(8, 9, 16);
    Rng rng(4);
    DisparityMap d(8, 9);
    for (auto& v : d.values()) v = rng.uniform(0.1, 2.0);
    const Grid g = smoothness_loss_backward(d, img);
    const double h = 1e-7;
    for (std::size_t i = 0; i < d.size(); i += 5) {
        DisparityMap dp = d, dm = d;
        dp[i] += h;
        dm[i] -= h;
        const double fd = (smoothness_loss(dp, img) - smoothness_loss(dm, img)) / (2 * h);
        CHECK(fd == doctest::Approx(g[i]).epsilon(1e-5));
    }
}

TEST_CASE("velocity loss") {
    ImageTriplet tri;
    tri.timestamps = {0.0, 0.5, 1.0};
    tri.velocities = {2.0, 2.0};
    const std::array<Vec3, 2> exact{Vec3(0, 0, 1.0), Vec3(0.6, 0, 0.8)};
    CHECK(velocity_loss(exact, tri) == doctest::Approx(0.0));
    const std::array<Vec3, 2> short_steps{Vec3(0, 0, 0.8), Vec3(0, 0.8, 0)};
    CHECK(velocity_loss(short_steps, tri) == doctest::Approx(0.4));
    tri.velocities = {0.0, 0.0};
    const std::array<Vec3, 2> still{Vec3::Zero(), Vec3::Zero()};
    CHECK(velocity_loss(still, tri) == 0.0);
    const auto g = velocity_loss_backward(still, tri);
    CHECK(g[0].norm() == 0.0);
}

TEST_CASE("total loss combines the parts") {
    const LossWeights w;
    CHECK(total_loss({0.5, 10.0, 2.0}, w) == doctest::Approx(0.61).epsilon(1e-14));
    CHECK(total_loss({0, 0, 0}, w) == 0.0);
    LossWeights only_pr = w;
    only_pr.smoothness = 0;
    only_pr.velocity = 0;
    CHECK(total_loss({0.3, 5.0, 7.0}, only_pr) == 0.3);
    try {
        total_loss({std::nan(""), 0, 0}, w);
        FAIL("expected NonFinite");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NonFinite);
    }
    // Monotone in each part.
    CHECK(total_loss({0.5, 10.0, 2.1}, w) > total_loss({0.5, 10.0, 2.0}, w));
    CHECK(total_loss({0.5, 10.1, 2.0}, w) > total_loss({0.5, 10.0, 2.0}, w));
}
