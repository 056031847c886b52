#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "clslam/geometry.hpp"

namespace clslam {

/// t_err in percent, r_err in degrees per 100 m.
struct SegmentErrors {
    double t_err = 0;
    double r_err = 0;
    std::size_t segments = 0;
};

struct SegmentOptions {
    std::vector<double> lengths{25, 50, 100, 150, 200};
    std::size_t step = 1;
    bool median_scaling = false;
};

/// KITTI-style relative errors. A segment starting at frame i with length L
/// ends at the first frame j whose path distance from i reaches L. Lengths
/// that no start frame can complete are skipped; TooShort when none can.
SegmentErrors relative_segment_errors(const Trajectory& gt, const Trajectory& est, const SegmentOptions& opt = {});

/// Same definition by enumerating every frame pair; O(n^2) reference.
SegmentErrors relative_segment_errors_bruteforce(const Trajectory& gt, const Trajectory& est,
                                                 const SegmentOptions& opt = {});

struct BaseMetrics {
    double trans = 0;  // t_hat
    double rot = 0;    // r_hat
};

/// t_hat = max(0, 1 - t_err/100), r_hat = 1 - r/180 with r in degrees per 100 m.
BaseMetrics remap_errors(const SegmentErrors& e);

/// One 12-number row per pose; timestamps are the row index unless `times`
/// is given. Throws ParseError, LengthMismatch.
Trajectory read_kitti_trajectory(std::istream& poses, std::istream* times = nullptr);
void write_kitti_trajectory(std::ostream& os, const Trajectory& t);

struct SceneRef {
    std::string env_id;
    std::string scene_id;
    friend auto operator<=>(const SceneRef&, const SceneRef&) = default;
};

using DeploymentSequence = std::vector<SceneRef>;
std::string sequence_key(const DeploymentSequence& s);

struct DeploymentRecord {
    DeploymentSequence sequence;
    SegmentErrors errors;  // of the final scene
};

struct RetentionPair {
    DeploymentSequence mixed;
    DeploymentSequence reference;
};

struct EvalPlan {
    SceneRef pretrain;
    std::vector<std::vector<SceneRef>> environments;  // scenes per environment, in order
    std::vector<DeploymentSequence> aq;
    std::vector<RetentionPair> rq;

    /// Every distinct sequence of the plan, sorted.
    std::vector<DeploymentSequence> all_sequences() const;
};

/// AQ set: every ordering of one or more first scenes (one per environment)
/// after the pre-training scene. RQ set: along the alternating sequence of
/// all scenes, every prefix whose last scene revisits an environment, paired
/// with the same prefix minus the scenes after that environment's previous
/// visit. Throws NotEnoughScenes.
EvalPlan make_eval_plan(const SceneRef& pretrain, const std::vector<std::vector<SceneRef>>& environments);

struct Quality {
    double trans = 0;
    double rot = 0;
};

/// Mean base metric over the plan's AQ sequences. Throws IncompleteSet.
Quality adaptation_quality(const EvalPlan& plan, const std::vector<DeploymentRecord>& records);
/// Mean (mixed - reference) base metric over the plan's RQ pairs. Throws IncompleteSet.
Quality retention_quality(const EvalPlan& plan, const std::vector<DeploymentRecord>& records);

/// Plain-list forms used for checks against published tables.
Quality adaptation_quality(const std::vector<SegmentErrors>& errors);
Quality retention_quality(const std::vector<SegmentErrors>& mixed, const std::vector<SegmentErrors>& reference);

}  // namespace clslam
