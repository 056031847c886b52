// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

#include "clslam/backend.hpp"
#include "clslam/harness.hpp"
#include "clslam/metrics.hpp"
#include "clslam/rng.hpp"
#include "clslam/simworld.hpp"
#include "clslam/toynets.hpp"
#include "reference_table.hpp"
#include "test_support.hpp"

using namespace clslam;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, substituted };

struct Outcome {
    Status status;
    std::string detail;
};

Outcome ok(bool b, std::string detail) { return {b ? Status::pass : Status::fail, std::move(detail)}; }

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

// ---------------------------------------------------------------- 1
Outcome metric_oracle() {
    using namespace clslam::testing;
    const auto ex = expert_errors(), ge = general_errors(), cl = clslam_errors();
    const Quality aq_ex = adaptation_quality(ex.aq), aq_ge = adaptation_quality(ge.aq), aq_cl = adaptation_quality(cl.aq);
    const Quality rq_cl = retention_quality(cl.rq_mixed, cl.rq_reference);
    const Quality rq_ge = retention_quality(ge.rq_mixed, ge.rq_reference);
    const bool pass = near(aq_ex.trans, 0.831, 1e-3) && near(aq_ge.trans, 0.787, 1e-3) &&
                      near(aq_ex.rot, 0.982, 1e-3) && near(aq_ge.rot, 0.979, 1e-3) &&
                      near(rq_cl.trans, -7.3e-3, 1e-4) && near(rq_ge.trans, -14.4e-3, 1e-4) &&
                      near(rq_cl.rot, -0.4e-3, 5e-5) && near(rq_ge.rot, -0.5e-3, 5e-5) &&
                      near(aq_cl.trans, 0.838, 1e-3);
    return ok(pass, "AQ_t expert " + fmt(aq_ex.trans) + " general " + fmt(aq_ge.trans) + " cl " + fmt(aq_cl.trans) +
                        "; AQ_r " + fmt(aq_ex.rot) + "/" + fmt(aq_ge.rot) + "; RQ_t cl " + fmt(rq_cl.trans, 3) +
                        " general " + fmt(rq_ge.trans, 3) + "; RQ_r " + fmt(rq_cl.rot, 2) + "/" + fmt(rq_ge.rot, 2));
}

// ---------------------------------------------------------------- 3
Outcome gradients() {
    const NetArch arch;
    const DepthNetToy dnet(arch);
    const PoseNetToy pnet(arch);
    double worst = 0;
    std::size_t checked = 0, skipped = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ImageTriplet tri = testing::shifted_triplet(arch.image_height, arch.image_width, 100 + seed);
        const NetworkPair params{dnet.init_params(seed), pnet.init_params(seed)};
        const GradientCheckReport r = gradient_check(dnet, pnet, CameraIntrinsics{60, 60, 48, 24, 96, 48}, LossWeights{},
                                                     params, tri, 100, 1e-5, seed);
        worst = std::max(worst, r.max_relative_error);
        checked += r.checked;
        skipped += r.skipped;
    }
    return ok(worst < 1e-4 && checked >= 500, std::to_string(checked) + " params over 5 seeds, max rel err " +
                                                  fmt(worst, 3) + " (" + std::to_string(skipped) +
                                                  " kink-straddling draws redrawn)");
}

// ---------------------------------------------------------------- 4
Outcome segment_oracle() {
    Trajectory gt, scaled, yawed;
    const double rate = 0.01 * std::numbers::pi / 180.0;
    for (int i = 0; i <= 400; ++i) {
        const Pose3 p(Eigen::Quaterniond::Identity(), Vec3(0, 0, i));
        gt.push_back(0.1 * i, p);
        scaled.push_back(0.1 * i, Pose3(Eigen::Quaterniond::Identity(), 1.05 * p.translation()));
        yawed.push_back(0.1 * i, p * Pose3(Eigen::Quaterniond(Eigen::AngleAxisd(rate * i, Vec3::UnitY())), Vec3::Zero()));
    }
    const SegmentErrors s = relative_segment_errors(gt, scaled), sb = relative_segment_errors_bruteforce(gt, scaled);
    const SegmentErrors y = relative_segment_errors(gt, yawed), yb = relative_segment_errors_bruteforce(gt, yawed);
    const bool pass = near(s.t_err, 5.0, 1e-6) && near(sb.t_err, 5.0, 1e-6) && near(y.r_err, 1.0, 1e-6) &&
                      near(yb.r_err, 1.0, 1e-6);
    return ok(pass, "scaled line t_err " + fmt(s.t_err, 10) + " (enum " + fmt(sb.t_err, 10) + "), yaw r_err " +
                        fmt(y.r_err, 10) + " (enum " + fmt(yb.r_err, 10) + ")");
}

// ---------------------------------------------------------------- 5, 8
struct BenchmarkRuns {
    std::vector<nlohmann::json> reports;  // seeds 1..4
    std::string error;
};

std::string cli_run(const fs::path& config, std::uint64_t seed, const fs::path& out, nlohmann::json& report) {
    std::ostringstream cmd;
    cmd << '"' << CLSLAM_CLI << "\" run --quiet --config \"" << config.string() << "\" --seed " << seed << " --out \""
        << out.string() << "\" > \"" << (out.string() + ".log") << "\" 2>&1";
    fs::create_directories(out.parent_path());
    const int rc = std::system(cmd.str().c_str());
    if (rc != 0) return "clslam run exited with " + std::to_string(rc) + ", see " + out.string() + ".log";
    std::ifstream is(out / "report.json");
    report = nlohmann::json::parse(is);
    return {};
}

Outcome continual_behaviour(const BenchmarkRuns& runs) {
    if (!runs.error.empty()) return {Status::fail, runs.error};
    int passing = 0;
    std::string detail;
    for (std::size_t k = 0; k < runs.reports.size(); ++k) {
        const ReportTable t = report_from_json(runs.reports[k]);
        // (i) fixed final-scene error above cl_slam's on every evaluated scene
        bool adapt = true;
        for (const auto& f : t.records) {
            if (f.method != AdaptationMode::fixed) continue;
            for (const auto& c : t.records)
                if (c.method == AdaptationMode::cl_slam && c.sequence == f.sequence && !(f.errors.t_err > c.errors.t_err))
                    adapt = false;
        }
        double rq_cl = 0, rq_ex = 0, rq_ge = 0;
        bool handoff = true;
        for (const auto& m : t.methods) {
            handoff = handoff && m.handoff_ok;
            if (m.method == AdaptationMode::cl_slam) rq_cl = m.rq.trans;
            if (m.method == AdaptationMode::expert_only) rq_ex = m.rq.trans;
            if (m.method == AdaptationMode::general_only) rq_ge = m.rq.trans;
        }
        const bool retain = rq_cl >= rq_ex && rq_ge >= rq_ex;
        const bool pass = adapt && retain && handoff;
        passing += pass;
        detail += "seed " + std::to_string(t.seed) + ": " + (adapt ? "i" : "-") + (retain ? "ii" : "--") +
                  (handoff ? "iii" : "---") + " RQ_t cl " + fmt(rq_cl, 3) + " ex " + fmt(rq_ex, 3) + " gen " +
                  fmt(rq_ge, 3) + (k + 1 < runs.reports.size() ? "; " : "");
    }
    return ok(passing >= 3, std::to_string(passing) + "/4 seeds pass [" + detail + "]");
}

Outcome determinism(const BenchmarkRuns& runs, const fs::path& config, const fs::path& work) {
    if (!runs.error.empty() || runs.reports.empty()) return {Status::fail, "first run missing: " + runs.error};
    nlohmann::json again;
    const std::string err = cli_run(config, 1, work / "seed1_again", again);
    if (!err.empty()) return {Status::fail, err};
    nlohmann::json a = runs.reports.front(), b = again;
    a.erase("timing");
    b.erase("timing");
    return ok(a.dump() == b.dump(), "seed 1 twice via CLI, reports without timing " +
                                        std::string(a.dump() == b.dump() ? "byte-identical" : "DIFFER"));
}

// ---------------------------------------------------------------- 6
Outcome pose_graph() {
    auto yaw = [](double r, const Vec3& t) { return Pose3(Eigen::Quaterniond(Eigen::AngleAxisd(r, Vec3::UnitY())), t); };
    std::vector<Pose3> gt{Pose3()};
    for (int side = 0; side < 4; ++side)
        for (int k = 0; k < 10; ++k) gt.push_back(gt.back() * yaw(k == 9 ? std::numbers::pi / 2 : 0.0, Vec3(0, 0, 1)));
    Rng rng(11);
    PoseGraph g;
    g.add_node(gt[0]);
    for (std::size_t i = 0; i + 1 < gt.size(); ++i) {
        const Pose3 z = gt[i].inverse() * gt[i + 1];
        const Vec3 n(rng.normal(), rng.normal(), rng.normal());
        const Pose3 noisy(z.quaternion(), z.translation() + 0.01 * z.translation().norm() * n.normalized());
        g.add_node(g.nodes().back() * noisy);
        g.add_odometry(i, i + 1, noisy);
    }
    const std::size_t last = gt.size() - 1;
    const double before = (g.nodes()[last].translation() - gt[last].translation()).norm();
    g.add_loop(0, last, gt[0].inverse() * gt[last]);
    const OptimizeReport r = optimize_graph(g);
    const double after = (g.nodes()[last].translation() - gt[last].translation()).norm();
    bool monotone = true;
    for (std::size_t k = 1; k < r.chi2_history.size(); ++k) monotone = monotone && r.chi2_history[k] <= r.chi2_history[k - 1];
    return ok(after <= 0.5 * before && monotone, "endpoint error " + fmt(before, 3) + " m -> " + fmt(after, 3) +
                                                     " m, chi2 " + fmt(r.chi2_before, 3) + " -> " + fmt(r.chi2_after, 3) +
                                                     (monotone ? " non-increasing" : " INCREASED"));
}

// ---------------------------------------------------------------- 7
Outcome loop_detection() {
    EnvironmentSpec env;
    SceneSpec sc;
    sc.seed = 2;
    sc.length = 60;
    sc.revisit = true;
    const RenderedScene s = generate_scene(env, sc);
    const std::size_t gap = 50;
    DescriptorMemory mem;
    std::size_t candidates = 0, true_hits = 0, gap_violations = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const Descriptor d = describe(*s.images[i]);
        for (const auto& c : detect_loops(i, d, mem, 0.95, gap)) {
            ++candidates;
            if (!(i - c.frame > gap)) ++gap_violations;
            // ground-truth revisit: nearest earlier frame outside the gap
            std::size_t best = 0;
            double best_d = 1e300;
            for (std::size_t j = 0; j + gap < i; ++j) {
                const double dist = (s.ground_truth[j].pose.translation() - s.ground_truth[i].pose.translation()).norm();
                if (dist < best_d) best_d = dist, best = j;
            }
            const std::size_t off = c.frame > best ? c.frame - best : best - c.frame;
            if (best_d < 1.0 && off <= 3) ++true_hits;
        }
        mem.add(i, d);
    }
    return ok(true_hits >= 1 && gap_violations == 0,
              std::to_string(s.size()) + " frames, " + std::to_string(candidates) + " candidates, " +
                  std::to_string(true_hits) + " within 3 frames of the true revisit, " +
                  std::to_string(gap_violations) + " gap violations");
}

}  // namespace

int main(int argc, char** argv) {
    // acceptance [N] [config]: all criteria, or only criterion N.
    // Exit 0 pass, 1 fail, 77 when the only criterion run is substituted.
    int only = 0;
    fs::path config = fs::path(CLSLAM_SOURCE_DIR) / "configs" / "benchmark.ini";
    for (int a = 1; a < argc; ++a) {
        const std::string arg = argv[a];
        if (arg.size() == 1 && std::isdigit(static_cast<unsigned char>(arg[0]))) only = arg[0] - '0';
        else config = arg;
    }
    const fs::path work = fs::temp_directory_path() / "clslam_acceptance";

    bool all = true, substituted = false;
    auto report = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
        if (only && only != id) return;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {Status::fail, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SUBSTITUTED";
        if (o.status == Status::fail) all = false;
        if (o.status == Status::substituted) substituted = true;
        std::cout << "criterion " << id << " " << tag << "  " << name << "  (" << fmt(secs, 3) << " s)  " << o.detail
                  << std::endl;
    };

    report(1, "metric oracle", metric_oracle);
    report(2, "full-scale results", [] {
        return Outcome{Status::substituted, "needs real datasets and full-size networks; covered by criteria 3-7"};
    });
    report(3, "gradient correctness", gradients);
    report(4, "segment-error oracle", segment_oracle);

    BenchmarkRuns runs;
    const std::string hash = load_config(config).hash();
    report(5, "continual-learning behaviour", [&] {
        for (std::uint64_t seed = 1; seed <= 4 && runs.error.empty(); ++seed) {
            const fs::path out = work / ("seed" + std::to_string(seed));
            fs::remove_all(out);
            nlohmann::json j;
            runs.error = cli_run(config, seed, out, j);
            if (runs.error.empty()) runs.reports.push_back(j);
        }
        return continual_behaviour(runs);
    });
    report(6, "pose-graph optimization", pose_graph);
    report(7, "loop detection", loop_detection);
    report(8, "determinism", [&] {
        if (runs.reports.empty()) {
            // reuse the seed-1 run of criterion 5 when it was made from this config
            nlohmann::json first;
            std::ifstream is(work / "seed1" / "report.json");
            if (is) first = nlohmann::json::parse(is, nullptr, false);
            if (first.is_discarded() || !first.is_object() || first.value("config_hash", "") != hash ||
                first.value("seed", 0) != 1) {
                fs::remove_all(work / "seed1");
                runs.error = cli_run(config, 1, work / "seed1", first);
            }
            if (runs.error.empty()) runs.reports.push_back(first);
        }
        fs::remove_all(work / "seed1_again");
        return determinism(runs, config, work);
    });
    if (!all) return 1;
    return only && substituted ? 77 : 0;
}
