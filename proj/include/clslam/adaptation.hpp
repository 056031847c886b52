#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "clslam/geometry.hpp"
#include "clslam/photometric.hpp"
#include "clslam/rng.hpp"
#include "clslam/simworld.hpp"
#include "clslam/toynets.hpp"

namespace clslam {

enum class AdaptationMode { cl_slam, fixed, expert_only, general_only, offline };

std::string_view to_string(AdaptationMode m);
/// Throws ConfigError on an unknown name.
AdaptationMode parse_adaptation_mode(std::string_view name);

struct AdaptationConfig {
    int cycles = 5;                 // c
    double learning_rate = 1e-4;
    double min_distance = 0.2;      // meters between accepted frames
    AdaptationMode mode = AdaptationMode::cl_slam;
    int replay_per_env = 1;         // replay triplets per foreign environment
    int offline_epochs = 2;         // offline mode: passes over the scene after deployment
    std::uint64_t seed = 1;

    void validate() const;
};

/// Networks, camera and loss weights shared by every learner.
struct Learner {
    DepthNetToy depth;
    PoseNetToy pose;
    CameraIntrinsics intrinsics;
    LossWeights weights;

    explicit Learner(const NetArch& arch, const CameraIntrinsics& k, const LossWeights& w = {})
        : depth(arch), pose(arch), intrinsics(k), weights(w) {}
};

/// Parameters plus one Adam state per network.
struct NetworkState {
    NetworkPair params;
    AdamState depth_adam;
    AdamState pose_adam;

    static NetworkState fresh(const NetworkPair& p, double lr);
};

/// Append-only triplet store keyed by environment. Sampling uses its own RNG.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::uint64_t seed = 0) : rng_(seed) {}

    void append(const ImageTriplet& t);
    std::size_t size() const { return entries_.size(); }
    std::vector<std::string> environments() const;  // sorted
    std::size_t count(const std::string& env) const;
    const ImageTriplet& at(const std::string& env, std::size_t position) const;
    /// Uniform draw from one environment's entries.
    const ImageTriplet& sample(const std::string& env);

private:
    std::vector<ImageTriplet> entries_;
    std::map<std::string, std::vector<std::size_t>> index_;
    Rng rng_;
};

bool frame_gate(double velocity, double dt, double min_distance);

/// [online] followed by `per_env` sampled triplets of every buffered
/// environment other than `current_env`, in sorted environment order.
std::vector<ImageTriplet> build_generalizer_batch(const ImageTriplet& online, ReplayBuffer& buffer,
                                                  const std::string& current_env, int per_env = 1);

/// c cycles of mean-batch-loss gradient + Adam. Returns the loss of each cycle
/// (measured before that cycle's update).
std::vector<double> adapt_step(const Learner& learner, NetworkState& state, std::span<const ImageTriplet> batch,
                               int cycles);

struct DualState {
    NetworkState expert;
    NetworkState generalizer;
    NetworkPair stored;
    ReplayBuffer buffer;
    int deployments = 0;

    DualState(const NetworkPair& initial, double lr, std::uint64_t seed);
};

struct FrameLog {
    std::size_t frame = 0;
    bool accepted = false;
    std::vector<double> expert_losses;
    std::vector<double> generalizer_losses;
    std::optional<Pose3> odometry;  // O_{t-1 -> t}, when emitted
};

struct DeploymentResult {
    std::string env_id;
    std::string scene_id;
    std::vector<std::size_t> frames;  // accepted frame indices
    Trajectory odometry;              // one pose per accepted frame, first = identity
    std::vector<FrameLog> log;
    std::uint64_t stored_checksum_before = 0;
    std::uint64_t stored_checksum_after = 0;
    std::uint64_t generalizer_checksum_after = 0;
    bool handoff_ok = false;  // expert = generalizer = stored at start, stored = generalizer at end
    double seconds = 0;
};

/// One deployment over a scene stream. Odometry for a frame is emitted after
/// that frame's update. Throws SceneTooShort with fewer than three accepted frames.
DeploymentResult run_deployment(DualState& state, const Learner& learner, const RenderedScene& scene,
                                const AdaptationConfig& config);

/// One JSON object per frame.
void write_deployment_log(std::ostream& os, const DeploymentResult& r);

struct PretrainConfig {
    int epochs = 20;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
};

/// Trains all parameters (encoder included) over shuffled triplets of the
/// given scenes. Returns the mean loss of each epoch.
std::vector<double> pretrain(const Learner& learner, NetworkPair& params, std::span<const RenderedScene> scenes,
                             const PretrainConfig& config);

}  // namespace clslam
