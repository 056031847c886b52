#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "clslam/simworld.hpp"
#include "doctest.h"

using namespace clslam;
namespace fs = std::filesystem;

namespace {

SceneSpec short_scene(std::uint64_t seed, double length = 30.0) {
    SceneSpec s;
    s.scene_id = "s" + std::to_string(seed);
    s.seed = seed;
    s.length = length;
    return s;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("clslam_sim_" + name);
    fs::remove_all(p);
    return p;
}

// Masked mean dissimilarity of frame i against frame i+1 warped with GT depth
// and motion. Pixels whose reprojection lands on a surface at a different
// depth in frame i+1 (occlusion / disocclusion) are left out.
double gt_warp_error(const RenderedScene& s, std::size_t i) {
    const auto& k = s.intrinsics;
    const Pose3 t_to_s = s.ground_truth[i + 1].pose.inverse() * s.ground_truth[i].pose;
    const WarpResult wr = warp_image(*s.images[i + 1], s.depths[i], t_to_s, k);
    const Grid e = photometric_dissimilarity(*s.images[i], wr.image, 0.85);
    double sum = 0;
    int count = 0;
    for (int r = 0; r < k.height; ++r) {
        for (int c = 0; c < k.width; ++c) {
            const std::size_t p = static_cast<std::size_t>(r) * k.width + c;
            if (!wr.valid[p]) continue;
            const Vec3 q = t_to_s.transform(unproject_pixel(Vec2(c, r), s.depths[i][p], k));
            const long u = std::lround(k.fx * q.x() / q.z() + k.cx);
            const long v = std::lround(k.fy * q.y() / q.z() + k.cy);
            if (u < 0 || v < 0 || u >= k.width || v >= k.height) continue;
            if (std::abs(q.z() - s.depths[i + 1](v, u)) > 0.05 * q.z()) continue;
            sum += e[p];
            ++count;
        }
    }
    REQUIRE(count > 0);
    return sum / count;
}

}  // namespace

TEST_CASE("scene generation is deterministic") {
    EnvironmentSpec env;
    const RenderedScene a = generate_scene(env, short_scene(3, 15));
    const RenderedScene b = generate_scene(env, short_scene(3, 15));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(*a.images[i] == *b.images[i]);
        CHECK(a.depths[i] == b.depths[i]);
        CHECK(a.ground_truth[i].pose.matrix() == b.ground_truth[i].pose.matrix());
    }
    CHECK(a.velocities == b.velocities);
    const RenderedScene c = generate_scene(env, short_scene(4, 15));
    CHECK(!(*a.images[5] == *c.images[5]));
}

TEST_CASE("ground-truth warping reproduces the neighbouring frame") {
    EnvironmentSpec env;
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
        const RenderedScene s = generate_scene(env, short_scene(seed, 40));
        double worst = 0;
        for (std::size_t i = 0; i + 1 < s.size(); ++i) worst = std::max(worst, gt_warp_error(s, i));
        INFO("seed " << seed);
        CHECK(worst < 0.02);
    }
}

TEST_CASE("revisit scenes return to the start pose") {
    EnvironmentSpec env;
    SceneSpec sc = short_scene(5, 60);
    sc.revisit = true;
    const RenderedScene s = generate_scene(env, sc);
    const Pose3& first = s.ground_truth[0].pose;
    const Pose3& last = s.ground_truth[s.size() - 1].pose;
    CHECK((first.translation() - last.translation()).norm() < 1.0);
}

TEST_CASE("noise-free velocities match ground-truth pose deltas") {
    EnvironmentSpec env;
    env.velocity_noise = 0.0;
    const RenderedScene s = generate_scene(env, short_scene(6, 20));
    for (std::size_t i = 1; i < s.size(); ++i) {
        const double d = (s.ground_truth[i].pose.translation() - s.ground_truth[i - 1].pose.translation()).norm();
        CHECK(std::abs(s.velocities[i] - d / (s.timestamps[i] - s.timestamps[i - 1])) < 1e-6);
    }
    CHECK(s.velocities[0] == s.velocities[1]);
}

TEST_CASE("dataset round-trip") {
    EnvironmentSpec env;
    env.env_id = "envx";
    const RenderedScene s = generate_scene(env, short_scene(7, 10));
    const fs::path dir = scratch("roundtrip");
    write_dataset(s, dir);

    std::size_t n_images = 0;
    for (const auto& e : fs::directory_iterator(dir / "images")) n_images += e.path().extension() == ".pgm";
    CHECK(n_images == s.size());
    std::ifstream poses(dir / "poses_gt.txt");
    std::string line;
    std::size_t n_lines = 0;
    while (std::getline(poses, line)) {
        std::istringstream ls(line);
        double v;
        int count = 0;
        while (ls >> v) ++count;
        CHECK(count == 12);
        ++n_lines;
    }
    CHECK(n_lines == s.size());

    const RenderedScene back = read_dataset(dir);
    CHECK(back.env_id == "envx");
    CHECK(back.scene_id == s.scene_id);
    REQUIRE(back.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(*back.images[i] == *s.images[i]);
        CHECK(std::abs(back.timestamps[i] - s.timestamps[i]) < 1e-12);
        CHECK(std::abs(back.velocities[i] - s.velocities[i]) < 1e-12);
        CHECK((back.ground_truth[i].pose.matrix() - s.ground_truth[i].pose.matrix()).cwiseAbs().maxCoeff() < 1e-12);
        for (std::size_t p = 0; p < s.depths[i].size(); ++p) CHECK(back.depths[i][p] == s.depths[i][p]);
    }
    fs::remove_all(dir);
}

TEST_CASE("dataset read errors") {
    EnvironmentSpec env;
    const RenderedScene s = generate_scene(env, short_scene(8, 8));
    const fs::path dir = scratch("errors");
    write_dataset(s, dir);

    fs::remove(dir / "poses_gt.txt");
    const RenderedScene no_gt = read_dataset(dir);
    CHECK(!no_gt.has_ground_truth());
    CHECK(no_gt.size() == s.size());

    {
        std::ofstream os(dir / "velocities.txt", std::ios::trunc);
        os << "1.0\n2.0\n";
    }
    try {
        read_dataset(dir);
        FAIL("expected InconsistentLengths");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InconsistentLengths);
    }
    {
        std::ofstream os(dir / "velocities.txt", std::ios::trunc);
        os << "abc\n";
    }
    try {
        read_dataset(dir);
        FAIL("expected ParseError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ParseError);
    }
    fs::remove(dir / "times.txt");
    try {
        read_dataset(dir);
        FAIL("expected MissingFile");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MissingFile);
    }
    fs::remove_all(dir);
}

TEST_CASE("zero-length scenes are rejected") {
    SceneSpec sc;
    sc.length = 0;
    try {
        generate_scene(EnvironmentSpec{}, sc);
        FAIL("expected DegenerateTrajectory");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DegenerateTrajectory);
    }
}

TEST_CASE("triplets carry interval-averaged velocities") {
    EnvironmentSpec env;
    const RenderedScene s = generate_scene(env, short_scene(9, 10));
    const ImageTriplet t = make_triplet(s, 0, 2, 5);
    const double dt = s.timestamps[2] - s.timestamps[0];
    const double expect = (s.velocities[1] * (s.timestamps[1] - s.timestamps[0]) +
                           s.velocities[2] * (s.timestamps[2] - s.timestamps[1])) / dt;
    CHECK(t.velocities[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(t.frame_index == 5);
    CHECK(scene_triplets(s).size() == s.size() - 2);
}
