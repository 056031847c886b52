#include "clslam/adaptation.hpp"

#include <algorithm>
#include <chrono>
#include "json.hpp"

#include "clslam/error.hpp"

namespace clslam {

std::string_view to_string(AdaptationMode m) {
    switch (m) {
        case AdaptationMode::cl_slam: return "cl_slam";
        case AdaptationMode::fixed: return "fixed";
        case AdaptationMode::expert_only: return "expert_only";
        case AdaptationMode::general_only: return "general_only";
        case AdaptationMode::offline: return "offline";
    }
    return "?";
}

AdaptationMode parse_adaptation_mode(std::string_view name) {
    for (auto m : {AdaptationMode::cl_slam, AdaptationMode::fixed, AdaptationMode::expert_only,
                   AdaptationMode::general_only, AdaptationMode::offline}) {
        if (to_string(m) == name) return m;
    }
    throw Error(ErrorKind::ConfigError, "unknown method '" + std::string(name) + "'");
}

void AdaptationConfig::validate() const {
    if (cycles < 1) throw Error(ErrorKind::ConfigError, "update cycles must be >= 1");
    if (!(min_distance >= 0)) throw Error(ErrorKind::ConfigError, "min distance must be >= 0");
    if (!(learning_rate >= 0)) throw Error(ErrorKind::ConfigError, "learning rate must be >= 0");
    if (replay_per_env < 0 || offline_epochs < 0) throw Error(ErrorKind::ConfigError, "negative count");
}

NetworkState NetworkState::fresh(const NetworkPair& p, double lr) {
    return {p, AdamState::for_params(p.depth, lr), AdamState::for_params(p.pose, lr)};
}

// ------------------------------------------------------------------ replay

void ReplayBuffer::append(const ImageTriplet& t) {
    index_[t.env_id].push_back(entries_.size());
    entries_.push_back(t);
}

std::vector<std::string> ReplayBuffer::environments() const {
    std::vector<std::string> out;
    for (const auto& [env, idx] : index_) out.push_back(env);
    return out;
}

std::size_t ReplayBuffer::count(const std::string& env) const {
    const auto it = index_.find(env);
    return it == index_.end() ? 0 : it->second.size();
}

const ImageTriplet& ReplayBuffer::at(const std::string& env, std::size_t position) const {
    const auto it = index_.find(env);
    if (it == index_.end() || position >= it->second.size())
        throw Error(ErrorKind::InvalidArgument, "replay entry " + env + "#" + std::to_string(position));
    return entries_[it->second[position]];
}

const ImageTriplet& ReplayBuffer::sample(const std::string& env) {
    const std::size_t n = count(env);
    if (n == 0) throw Error(ErrorKind::InvalidArgument, "no replay entries for " + env);
    return at(env, rng_.below(n));
}

bool frame_gate(double velocity, double dt, double min_distance) {
    if (!(dt > 0)) throw Error(ErrorKind::InvalidArgument, "frame gate needs dt > 0");
    return velocity * dt >= min_distance;
}

std::vector<ImageTriplet> build_generalizer_batch(const ImageTriplet& online, ReplayBuffer& buffer,
                                                  const std::string& current_env, int per_env) {
    std::vector<ImageTriplet> batch{online};
    for (const auto& env : buffer.environments()) {
        if (env == current_env) continue;
        for (int i = 0; i < per_env; ++i) batch.push_back(buffer.sample(env));
    }
    return batch;
}

std::vector<double> adapt_step(const Learner& learner, NetworkState& state, std::span<const ImageTriplet> batch,
                               int cycles) {
    if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "empty batch");
    if (cycles < 1) throw Error(ErrorKind::InvalidArgument, "cycles must be >= 1");
    std::vector<double> losses;
    losses.reserve(cycles);
    for (int c = 0; c < cycles; ++c) {
        BatchGradient g = batch_loss_gradient(learner.depth, learner.pose, learner.intrinsics, learner.weights,
                                              state.params, batch);
        losses.push_back(g.loss);
        adam_step(state.params.depth, g.grad.depth.values, state.depth_adam);
        adam_step(state.params.pose, g.grad.pose.values, state.pose_adam);
    }
    return losses;
}

DualState::DualState(const NetworkPair& initial, double lr, std::uint64_t seed)
    : expert(NetworkState::fresh(initial, lr)),
      generalizer(NetworkState::fresh(initial, lr)),
      stored(initial),
      buffer(derive_seed(seed, "replay")) {}

// -------------------------------------------------------------- deployment

namespace {

Pose3 predict_motion(const Learner& l, const NetworkPair& p, const Image& a, const Image& b) {
    return se3_exp(l.pose.forward(a, b, p.pose));
}

bool same(const NetworkPair& a, const NetworkPair& b) { return a.depth == b.depth && a.pose == b.pose; }

std::uint64_t checksum(const NetworkPair& p) { return mix64(p.depth.checksum() ^ mix64(p.pose.checksum())); }

}  // namespace

DeploymentResult run_deployment(DualState& state, const Learner& learner, const RenderedScene& scene,
                                const AdaptationConfig& config) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const AdaptationMode mode = config.mode;

    state.expert = NetworkState::fresh(state.stored, config.learning_rate);
    state.generalizer = NetworkState::fresh(state.stored, config.learning_rate);

    DeploymentResult r;
    r.env_id = scene.env_id;
    r.scene_id = scene.scene_id;
    r.stored_checksum_before = checksum(state.stored);
    const bool start_ok = same(state.expert.params, state.stored) && same(state.generalizer.params, state.stored);

    std::vector<Pose3> poses;
    std::vector<ImageTriplet> seen;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        FrameLog fl;
        fl.frame = i;
        if (r.frames.empty()) {
            fl.accepted = true;
        } else {
            const std::size_t last = r.frames.back();
            const double dt = scene.timestamps[i] - scene.timestamps[last];
            fl.accepted = frame_gate(mean_velocity(scene, last, i), dt, config.min_distance);
        }
        if (!fl.accepted) {
            r.log.push_back(std::move(fl));
            continue;
        }
        r.frames.push_back(i);
        if (r.frames.size() == 1) poses.push_back(Pose3::identity());
        if (r.frames.size() < 3) {
            r.log.push_back(std::move(fl));
            continue;
        }

        const std::size_t n = r.frames.size();
        const std::size_t a = r.frames[n - 3], b = r.frames[n - 2], c = r.frames[n - 1];
        const ImageTriplet online = make_triplet(scene, a, b, c);

        const NetworkPair* odo = &state.stored;
        switch (mode) {
            case AdaptationMode::cl_slam: {
                fl.expert_losses = adapt_step(learner, state.expert, std::span(&online, 1), config.cycles);
                const auto batch = build_generalizer_batch(online, state.buffer, scene.env_id, config.replay_per_env);
                fl.generalizer_losses = adapt_step(learner, state.generalizer, batch, config.cycles);
                odo = &state.expert.params;
                break;
            }
            case AdaptationMode::expert_only:
                fl.expert_losses = adapt_step(learner, state.expert, std::span(&online, 1), config.cycles);
                odo = &state.expert.params;
                break;
            case AdaptationMode::general_only: {
                const auto batch = build_generalizer_batch(online, state.buffer, scene.env_id, config.replay_per_env);
                fl.generalizer_losses = adapt_step(learner, state.generalizer, batch, config.cycles);
                odo = &state.generalizer.params;
                break;
            }
            case AdaptationMode::fixed:
            case AdaptationMode::offline:
                break;
        }
        state.buffer.append(online);
        if (mode == AdaptationMode::offline) seen.push_back(online);

        if (n == 3) poses.push_back(poses.back() * predict_motion(learner, *odo, *scene.images[a], *scene.images[b]));
        const Pose3 step = predict_motion(learner, *odo, *scene.images[b], *scene.images[c]);
        poses.push_back(poses.back() * step);
        fl.odometry = step;
        r.log.push_back(std::move(fl));
    }
    if (r.frames.size() < 3) {
        throw Error(ErrorKind::SceneTooShort, scene.scene_id + ": " + std::to_string(r.frames.size()) +
                                                  " accepted frames");
    }

    switch (mode) {
        case AdaptationMode::cl_slam:
        case AdaptationMode::general_only: state.stored = state.generalizer.params; break;
        case AdaptationMode::expert_only: state.stored = state.expert.params; break;
        case AdaptationMode::offline: {
            Rng rng(derive_seed(config.seed, "offline:" + scene.scene_id));
            for (int e = 0; e < config.offline_epochs; ++e) {
                for (std::size_t k = seen.size(); k > 1; --k) std::swap(seen[k - 1], seen[rng.below(k)]);
                for (const auto& t : seen) adapt_step(learner, state.generalizer, std::span(&t, 1), 1);
            }
            state.stored = state.generalizer.params;
            break;
        }
        case AdaptationMode::fixed: break;
    }

    for (std::size_t k = 0; k < r.frames.size(); ++k) r.odometry.push_back(scene.timestamps[r.frames[k]], poses[k]);
    r.stored_checksum_after = checksum(state.stored);
    r.generalizer_checksum_after = checksum(state.generalizer.params);
    const bool end_ok = mode == AdaptationMode::expert_only ? same(state.stored, state.expert.params)
                        : mode == AdaptationMode::fixed     ? r.stored_checksum_after == r.stored_checksum_before
                                                            : same(state.stored, state.generalizer.params);
    r.handoff_ok = start_ok && end_ok;
    ++state.deployments;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

void write_deployment_log(std::ostream& os, const DeploymentResult& r) {
    for (const auto& f : r.log) {
        nlohmann::json j;
        j["scene"] = r.scene_id;
        j["frame"] = f.frame;
        j["accepted"] = f.accepted;
        j["expert_losses"] = f.expert_losses;
        j["generalizer_losses"] = f.generalizer_losses;
        if (f.odometry) {
            const auto row = f.odometry->to_row();
            j["odometry"] = std::vector<double>(row.begin(), row.end());
        } else {
            j["odometry"] = nullptr;
        }
        os << j.dump() << "\n";
    }
}

std::vector<double> pretrain(const Learner& learner, NetworkPair& params, std::span<const RenderedScene> scenes,
                             const PretrainConfig& config) {
    std::vector<ImageTriplet> data;
    for (const auto& s : scenes) {
        auto t = scene_triplets(s);
        data.insert(data.end(), t.begin(), t.end());
    }
    if (data.empty()) throw Error(ErrorKind::SceneTooShort, "no pre-training triplets");

    const std::size_t fd = params.depth.frozen_prefix, fp = params.pose.frozen_prefix;
    params.depth.frozen_prefix = 0;
    params.pose.frozen_prefix = 0;
    NetworkState st = NetworkState::fresh(params, config.learning_rate);
    Rng rng(derive_seed(config.seed, "pretrain"));
    std::vector<double> epoch_loss;
    for (int e = 0; e < config.epochs; ++e) {
        for (std::size_t k = data.size(); k > 1; --k) std::swap(data[k - 1], data[rng.below(k)]);
        long double sum = 0;
        for (const auto& t : data) sum += adapt_step(learner, st, std::span(&t, 1), 1).front();
        epoch_loss.push_back(static_cast<double>(sum / data.size()));
    }
    params = st.params;
    params.depth.frozen_prefix = fd;
    params.pose.frozen_prefix = fp;
    return epoch_loss;
}

}  // namespace clslam
