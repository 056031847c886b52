#include <cmath>
#include <numbers>

#include "clslam/error.hpp"
#include "clslam/metrics.hpp"
#include "clslam/rng.hpp"
#include "doctest.h"
#include "reference_table.hpp"

using namespace clslam;
using namespace clslam::testing;

namespace {

Pose3 yaw(double rad, const Vec3& t = Vec3::Zero()) {
    return Pose3(Eigen::Quaterniond(Eigen::AngleAxisd(rad, Vec3::UnitY())), t);
}

Trajectory straight_line(int n, double step) {
    Trajectory t;
    for (int i = 0; i < n; ++i) t.push_back(0.1 * i, Pose3(Eigen::Quaterniond::Identity(), Vec3(0, 0, step * i)));
    return t;
}

Trajectory wiggly(int n, std::uint64_t seed) {
    Rng rng(seed);
    Trajectory t;
    Pose3 p;
    for (int i = 0; i < n; ++i) {
        t.push_back(0.1 * i, p);
        p = p * yaw(rng.uniform(-0.05, 0.05), Vec3(rng.uniform(-0.05, 0.05), 0, rng.uniform(0.5, 1.5)));
    }
    return t;
}

void check_kind(auto&& f, ErrorKind kind) {
    try {
        f();
        FAIL("expected " << to_string(kind));
    } catch (const Error& e) {
        CHECK(e.kind() == kind);
    }
}

}  // namespace

TEST_CASE("identical trajectories have zero error") {
    const Trajectory gt = wiggly(300, 1);
    const SegmentErrors e = relative_segment_errors(gt, gt);
    CHECK(e.t_err < 1e-9);
    CHECK(e.r_err < 1e-9);
    CHECK(e.segments > 0);
}

TEST_CASE("scaled straight line gives five percent") {
    const Trajectory gt = straight_line(401, 1.0);
    Trajectory est;
    for (std::size_t i = 0; i < gt.size(); ++i)
        est.push_back(gt[i].timestamp, Pose3(Eigen::Quaterniond::Identity(), 1.05 * gt[i].pose.translation()));
    SegmentOptions opt;
    opt.lengths = {100, 200, 300, 400};
    const SegmentErrors fast = relative_segment_errors(gt, est, opt);
    const SegmentErrors brute = relative_segment_errors_bruteforce(gt, est, opt);
    CHECK(std::abs(fast.t_err - 5.0) < 1e-6);
    CHECK(std::abs(brute.t_err - 5.0) < 1e-6);
    CHECK(fast.r_err < 1e-9);
    CHECK(fast.segments == brute.segments);
}

TEST_CASE("constant yaw drift gives one degree per hundred meters") {
    const Trajectory gt = straight_line(401, 1.0);
    const double rate = 0.01 * std::numbers::pi / 180.0;  // rad per meter
    Trajectory est;
    for (std::size_t i = 0; i < gt.size(); ++i) est.push_back(gt[i].timestamp, gt[i].pose * yaw(rate * i));
    const SegmentErrors fast = relative_segment_errors(gt, est);
    const SegmentErrors brute = relative_segment_errors_bruteforce(gt, est);
    CHECK(std::abs(fast.r_err - 1.0) < 1e-6);
    CHECK(std::abs(brute.r_err - 1.0) < 1e-6);
}

TEST_CASE("fast segment search matches enumeration on curved paths") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const Trajectory gt = wiggly(250, seed);
        const Trajectory est = wiggly(250, seed + 100);
        SegmentOptions opt;
        opt.lengths = {10, 25, 50, 100};
        const SegmentErrors a = relative_segment_errors(gt, est, opt);
        const SegmentErrors b = relative_segment_errors_bruteforce(gt, est, opt);
        CHECK(a.segments == b.segments);
        CHECK(a.t_err == doctest::Approx(b.t_err).epsilon(1e-12));
        CHECK(a.r_err == doctest::Approx(b.r_err).epsilon(1e-12));
    }
}

TEST_CASE("segment errors ignore a shared rigid transform") {
    const Trajectory gt = wiggly(200, 4);
    const Trajectory est = wiggly(200, 5);
    const Pose3 g = yaw(0.7, Vec3(3, -1, 2));
    Trajectory gt2, est2;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        gt2.push_back(gt[i].timestamp, g * gt[i].pose);
        est2.push_back(est[i].timestamp, g * est[i].pose);
    }
    const SegmentErrors a = relative_segment_errors(gt, est);
    const SegmentErrors b = relative_segment_errors(gt2, est2);
    CHECK(a.t_err == doctest::Approx(b.t_err).epsilon(1e-9));
    CHECK(a.r_err == doctest::Approx(b.r_err).epsilon(1e-9));
}

TEST_CASE("median scaling removes a global scale") {
    const Trajectory gt = wiggly(200, 6);
    Trajectory est;
    for (std::size_t i = 0; i < gt.size(); ++i)
        est.push_back(gt[i].timestamp, Pose3(gt[i].pose.quaternion(), 0.5 * gt[i].pose.translation()));
    SegmentOptions opt;
    CHECK(relative_segment_errors(gt, est, opt).t_err > 10.0);
    opt.median_scaling = true;
    CHECK(relative_segment_errors(gt, est, opt).t_err < 1e-9);
}

TEST_CASE("segment error failures") {
    const Trajectory gt = straight_line(20, 1.0);
    check_kind([&] { relative_segment_errors(gt, gt); }, ErrorKind::TooShort);
    check_kind([&] { relative_segment_errors(gt, straight_line(19, 1.0)); }, ErrorKind::LengthMismatch);
}

TEST_CASE("remapping") {
    CHECK(remap_errors({150.0, 0.0}).trans == 0.0);
    CHECK(remap_errors({2.5, 0.0}).trans == doctest::Approx(0.975));
    CHECK(remap_errors({0.0, 5.49}).rot == doctest::Approx(0.9695).epsilon(1e-4));
    const BaseMetrics one = remap_errors({0.0, 0.0});
    CHECK(one.trans == 1.0);
    CHECK(one.rot == 1.0);
}

TEST_CASE("quality metrics on the reference table") {
    const Quality ge = adaptation_quality(general_errors().aq);
    CHECK(std::abs(ge.trans - 0.787) < 1e-3);
    CHECK(std::abs(ge.rot - 0.979) < 1e-3);
    const Quality ex = adaptation_quality(expert_errors().aq);
    CHECK(std::abs(ex.trans - 0.831) < 1e-3);
    CHECK(std::abs(ex.rot - 0.982) < 1e-3);
    CHECK(std::abs(adaptation_quality(clslam_errors().aq).trans - 0.838) < 1e-3);

    const auto cl = clslam_errors();
    const Quality clr = retention_quality(cl.rq_mixed, cl.rq_reference);
    CHECK(std::abs(clr.trans - -7.3e-3) < 1e-4);
    CHECK(std::abs(clr.rot - -0.4e-3) < 5e-5);
    const auto g = general_errors();
    const Quality gr = retention_quality(g.rq_mixed, g.rq_reference);
    CHECK(std::abs(gr.trans - -14.4e-3) < 1e-4);
    CHECK(std::abs(gr.rot - -0.5e-3) < 5e-5);

    const std::vector<SegmentErrors> zeros(4);
    CHECK(adaptation_quality(zeros).trans == 1.0);
    CHECK(retention_quality(g.rq_mixed, g.rq_mixed).trans == 0.0);
}

TEST_CASE("evaluation plan") {
    const SceneRef p{"p", "p0"}, a1{"a", "a1"}, a2{"a", "a2"}, b1{"b", "b1"}, b2{"b", "b2"};
    const EvalPlan plan = make_eval_plan(p, {{a1, a2}, {b1, b2}});
    REQUIRE(plan.aq.size() == 4);
    CHECK(plan.aq[0] == DeploymentSequence{p, a1});
    CHECK(plan.aq[1] == DeploymentSequence{p, b1});
    CHECK(plan.aq[2] == DeploymentSequence{p, a1, b1});
    CHECK(plan.aq[3] == DeploymentSequence{p, b1, a1});
    REQUIRE(plan.rq.size() == 2);
    CHECK(plan.rq[0].mixed == DeploymentSequence{p, a1, b1, a2});
    CHECK(plan.rq[0].reference == DeploymentSequence{p, a1, a2});
    CHECK(plan.rq[1].mixed == DeploymentSequence{p, a1, b1, a2, b2});
    CHECK(plan.rq[1].reference == DeploymentSequence{p, a1, b1, b2});
    CHECK(plan.all_sequences().size() == 8);

    check_kind([&] { make_eval_plan(p, {{a1, a2}}); }, ErrorKind::NotEnoughScenes);
    check_kind([&] { make_eval_plan(p, {{a1}, {b1, b2}}); }, ErrorKind::NotEnoughScenes);

    const SceneRef c1{"c", "c1"}, c2{"c", "c2"};
    const EvalPlan three = make_eval_plan(p, {{a1, a2}, {b1, b2}, {c1, c2}});
    CHECK(three.aq.size() == 15);
    CHECK(three.rq.size() == 3);
}

TEST_CASE("quality from records needs every sequence") {
    const SceneRef p{"p", "p0"}, a1{"a", "a1"}, a2{"a", "a2"}, b1{"b", "b1"}, b2{"b", "b2"};
    const EvalPlan plan = make_eval_plan(p, {{a1, a2}, {b1, b2}});
    std::vector<DeploymentRecord> recs;
    for (const auto& s : plan.all_sequences()) recs.push_back({s, {1.0, 1.0}});
    CHECK(adaptation_quality(plan, recs).trans == doctest::Approx(0.99));
    CHECK(retention_quality(plan, recs).trans == 0.0);
    recs.pop_back();
    bool threw = false;
    try {
        adaptation_quality(plan, recs);
        retention_quality(plan, recs);
    } catch (const Error& e) {
        threw = e.kind() == ErrorKind::IncompleteSet;
    }
    CHECK(threw);
}
