#include "clslam/metrics.hpp"

#include <algorithm>
#include <map>
#include <numbers>
#include <iomanip>
#include <istream>
#include <set>
#include <sstream>

#include "clslam/error.hpp"

namespace clslam {

namespace {

void check_inputs(const Trajectory& gt, const Trajectory& est, const SegmentOptions& opt) {
    if (gt.size() != est.size())
        throw Error(ErrorKind::LengthMismatch, std::to_string(gt.size()) + " gt vs " + std::to_string(est.size()) + " est poses");
    if (opt.lengths.empty() || opt.step == 0) throw Error(ErrorKind::InvalidArgument, "segment options");
    for (double l : opt.lengths) {
        if (!(l > 0)) throw Error(ErrorKind::InvalidArgument, "segment length must be positive");
    }
}

std::vector<double> path_distances(const Trajectory& t) {
    std::vector<double> d(t.size(), 0.0);
    for (std::size_t i = 1; i < t.size(); ++i)
        d[i] = d[i - 1] + (t[i].pose.translation() - t[i - 1].pose.translation()).norm();
    return d;
}

std::vector<Pose3> maybe_scaled(const Trajectory& gt, const Trajectory& est, bool median_scaling) {
    std::vector<Pose3> out = est.pose_list();
    if (!median_scaling || est.size() < 2) return out;
    std::vector<double> ratios;
    for (std::size_t i = 1; i < est.size(); ++i) {
        const double e = (est[i].pose.translation() - est[i - 1].pose.translation()).norm();
        const double g = (gt[i].pose.translation() - gt[i - 1].pose.translation()).norm();
        if (e > 1e-12) ratios.push_back(g / e);
    }
    if (ratios.empty()) return out;
    std::nth_element(ratios.begin(), ratios.begin() + ratios.size() / 2, ratios.end());
    const double s = ratios[ratios.size() / 2];
    for (auto& p : out) p = Pose3(p.quaternion(), s * p.translation());
    return out;
}

struct Accum {
    long double t = 0, r = 0;
    std::size_t n = 0;

    void add(const Pose3& gi, const Pose3& gj, const Pose3& ei, const Pose3& ej, double len) {
        const Pose3 err = (ei.inverse() * ej).inverse() * (gi.inverse() * gj);
        t += err.translation().norm() / len;
        r += err.angle() / len;
        ++n;
    }

    SegmentErrors finish() const {
        if (n == 0) throw Error(ErrorKind::TooShort, "trajectory shorter than every segment length");
        return {static_cast<double>(100.0L * t / n), static_cast<double>(100.0L * r / n * 180.0L / std::numbers::pi_v<long double>), n};
    }
};

}  // namespace

SegmentErrors relative_segment_errors(const Trajectory& gt, const Trajectory& est, const SegmentOptions& opt) {
    check_inputs(gt, est, opt);
    const std::vector<double> dist = path_distances(gt);
    const std::vector<Pose3> g = gt.pose_list();
    const std::vector<Pose3> e = maybe_scaled(gt, est, opt.median_scaling);
    Accum acc;
    for (std::size_t i = 0; i < g.size(); i += opt.step) {
        for (double len : opt.lengths) {
            const auto it = std::lower_bound(dist.begin() + i, dist.end(), dist[i] + len);
            if (it == dist.end()) continue;
            const auto j = static_cast<std::size_t>(it - dist.begin());
            acc.add(g[i], g[j], e[i], e[j], len);
        }
    }
    return acc.finish();
}

SegmentErrors relative_segment_errors_bruteforce(const Trajectory& gt, const Trajectory& est,
                                                 const SegmentOptions& opt) {
    check_inputs(gt, est, opt);
    const std::vector<Pose3> g = gt.pose_list();
    const std::vector<Pose3> e = maybe_scaled(gt, est, opt.median_scaling);
    Accum acc;
    for (std::size_t i = 0; i < g.size(); i += opt.step) {
        for (double len : opt.lengths) {
            double walked = 0;
            for (std::size_t j = i + 1; j < g.size(); ++j) {
                walked += (g[j].translation() - g[j - 1].translation()).norm();
                if (walked >= len) {
                    acc.add(g[i], g[j], e[i], e[j], len);
                    break;
                }
            }
        }
    }
    return acc.finish();
}

BaseMetrics remap_errors(const SegmentErrors& e) {
    return {std::max(0.0, 1.0 - e.t_err / 100.0), std::clamp(1.0 - e.r_err / 180.0, 0.0, 1.0)};
}

std::string sequence_key(const DeploymentSequence& s) {
    std::string out;
    for (const auto& r : s) {
        if (!out.empty()) out += ">";
        out += r.env_id + "/" + r.scene_id;
    }
    return out;
}

std::vector<DeploymentSequence> EvalPlan::all_sequences() const {
    std::set<DeploymentSequence> seqs(aq.begin(), aq.end());
    for (const auto& p : rq) {
        seqs.insert(p.mixed);
        seqs.insert(p.reference);
    }
    return {seqs.begin(), seqs.end()};
}

EvalPlan make_eval_plan(const SceneRef& pretrain, const std::vector<std::vector<SceneRef>>& environments) {
    if (environments.size() < 2) throw Error(ErrorKind::NotEnoughScenes, "need at least two environments");
    for (const auto& env : environments) {
        if (env.size() < 2) throw Error(ErrorKind::NotEnoughScenes, "need two scenes per environment");
    }
    EvalPlan plan;
    plan.pretrain = pretrain;
    plan.environments = environments;

    // Ordered selections of first scenes, shortest first.
    const std::size_t m = environments.size();
    std::vector<std::vector<std::size_t>> frontier{{}};
    for (std::size_t depth = 1; depth <= m; ++depth) {
        std::vector<std::vector<std::size_t>> next;
        for (const auto& prefix : frontier) {
            for (std::size_t e = 0; e < m; ++e) {
                if (std::find(prefix.begin(), prefix.end(), e) != prefix.end()) continue;
                auto p = prefix;
                p.push_back(e);
                DeploymentSequence s{pretrain};
                for (std::size_t k : p) s.push_back(environments[k][0]);
                plan.aq.push_back(s);
                next.push_back(std::move(p));
            }
        }
        frontier = std::move(next);
    }

    // Alternating sequence over all scenes: round r visits scene r of each environment.
    std::vector<std::pair<std::size_t, SceneRef>> alternating;
    std::size_t rounds = 0;
    for (const auto& env : environments) rounds = std::max(rounds, env.size());
    for (std::size_t r = 0; r < rounds; ++r) {
        for (std::size_t e = 0; e < m; ++e) {
            if (r < environments[e].size()) alternating.emplace_back(e, environments[e][r]);
        }
    }
    for (std::size_t k = 0; k < alternating.size(); ++k) {
        const std::size_t env = alternating[k].first;
        std::size_t prev = k;
        for (std::size_t q = k; q-- > 0;) {
            if (alternating[q].first == env) {
                prev = q;
                break;
            }
        }
        if (prev == k || prev + 1 == k) continue;
        RetentionPair pair;
        pair.mixed.push_back(pretrain);
        pair.reference.push_back(pretrain);
        for (std::size_t q = 0; q <= k; ++q) {
            pair.mixed.push_back(alternating[q].second);
            if (q <= prev || q == k) pair.reference.push_back(alternating[q].second);
        }
        plan.rq.push_back(std::move(pair));
    }
    return plan;
}

namespace {

const SegmentErrors& find_record(const std::map<DeploymentSequence, SegmentErrors>& by_seq, const DeploymentSequence& s) {
    const auto it = by_seq.find(s);
    if (it == by_seq.end()) throw Error(ErrorKind::IncompleteSet, "no record for " + sequence_key(s));
    return it->second;
}

std::map<DeploymentSequence, SegmentErrors> index_records(const std::vector<DeploymentRecord>& records) {
    std::map<DeploymentSequence, SegmentErrors> out;
    for (const auto& r : records) out[r.sequence] = r.errors;
    return out;
}

}  // namespace

Quality adaptation_quality(const std::vector<SegmentErrors>& errors) {
    if (errors.empty()) throw Error(ErrorKind::IncompleteSet, "no AQ records");
    Quality q;
    for (const auto& e : errors) {
        const BaseMetrics b = remap_errors(e);
        q.trans += b.trans;
        q.rot += b.rot;
    }
    q.trans /= errors.size();
    q.rot /= errors.size();
    return q;
}

Quality retention_quality(const std::vector<SegmentErrors>& mixed, const std::vector<SegmentErrors>& reference) {
    if (mixed.empty() || mixed.size() != reference.size()) throw Error(ErrorKind::IncompleteSet, "RQ pairs incomplete");
    Quality q;
    for (std::size_t i = 0; i < mixed.size(); ++i) {
        const BaseMetrics a = remap_errors(mixed[i]), b = remap_errors(reference[i]);
        q.trans += a.trans - b.trans;
        q.rot += a.rot - b.rot;
    }
    q.trans /= mixed.size();
    q.rot /= mixed.size();
    return q;
}

Quality adaptation_quality(const EvalPlan& plan, const std::vector<DeploymentRecord>& records) {
    const auto by_seq = index_records(records);
    std::vector<SegmentErrors> errs;
    for (const auto& s : plan.aq) errs.push_back(find_record(by_seq, s));
    return adaptation_quality(errs);
}

Quality retention_quality(const EvalPlan& plan, const std::vector<DeploymentRecord>& records) {
    const auto by_seq = index_records(records);
    std::vector<SegmentErrors> mixed, ref;
    for (const auto& p : plan.rq) {
        mixed.push_back(find_record(by_seq, p.mixed));
        ref.push_back(find_record(by_seq, p.reference));
    }
    return retention_quality(mixed, ref);
}

Trajectory read_kitti_trajectory(std::istream& poses, std::istream* times) {
    std::vector<std::array<double, 12>> rows;
    std::string line;
    std::size_t n = 0;
    while (std::getline(poses, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        std::array<double, 12> row{};
        for (double& v : row) {
            if (!(ls >> v)) throw Error(ErrorKind::ParseError, "pose line " + std::to_string(n));
        }
        std::string extra;
        if (ls >> extra) throw Error(ErrorKind::ParseError, "pose line " + std::to_string(n) + " has more than 12 numbers");
        rows.push_back(row);
    }
    std::vector<double> stamps;
    if (times) {
        std::string tok;
        while (*times >> tok) {
            try {
                std::size_t pos = 0;
                stamps.push_back(std::stod(tok, &pos));
                if (pos != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw Error(ErrorKind::ParseError, "bad timestamp '" + tok + "'");
            }
        }
        if (stamps.size() != rows.size())
            throw Error(ErrorKind::LengthMismatch, std::to_string(stamps.size()) + " times vs " + std::to_string(rows.size()) + " poses");
    }
    Trajectory t;
    for (std::size_t i = 0; i < rows.size(); ++i) t.push_back(times ? stamps[i] : static_cast<double>(i), Pose3::from_row(rows[i]));
    return t;
}

void write_kitti_trajectory(std::ostream& os, const Trajectory& t) {
    os << std::setprecision(17);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto row = t[i].pose.to_row();
        for (std::size_t k = 0; k < row.size(); ++k) os << (k ? " " : "") << row[k];
        os << "\n";
    }
}

}  // namespace clslam
