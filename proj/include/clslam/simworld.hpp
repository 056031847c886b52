#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clslam/geometry.hpp"
#include "clslam/image.hpp"
#include "clslam/photometric.hpp"

namespace clslam {

/// Rendering domain of one environment. Each knob moves the domain gap.
struct EnvironmentSpec {
    std::string env_id = "env";
    std::uint64_t texture_seed = 1;
    double texture_frequency = 0.8;  // base octave, cycles per meter
    int texture_octaves = 3;
    double contrast = 0.7;           // (0, 1]
    double gain = 1.0;               // > 0
    double bias = 0.0;
    double box_density = 0.15;       // boxes per meter of path
    double box_height_min = 1.5;
    double box_height_max = 5.0;
    double box_size_min = 1.0;       // footprint edge, meters
    double box_size_max = 3.0;
    double velocity_min = 3.0;       // m/s
    double velocity_max = 6.0;
    double noise_sigma = 0.001;      // image noise, intensity units
    double velocity_noise = 0.01;    // multiplicative, on velocity readings

    void validate() const;
};

struct SceneSpec {
    std::string scene_id = "scene";
    std::uint64_t seed = 1;
    double length = 120.0;        // meters
    double max_curvature = 0.04;  // 1/m
    bool revisit = false;         // closed path ending at the start pose
    double frame_rate = 10.0;     // Hz

    void validate() const;
};

struct RenderSettings {
    CameraIntrinsics intrinsics{60, 60, 48, 24, 96, 48};
    double camera_height = 1.5;
    int supersample = 3;  // per axis
    double sky_depth = 1000.0;
};

struct RenderedScene {
    std::string env_id;
    std::string scene_id;
    CameraIntrinsics intrinsics;
    std::vector<ImagePtr> images;
    std::vector<DepthMap> depths;     // empty when not available
    std::vector<double> timestamps;   // seconds
    std::vector<double> velocities;   // m/s reading per frame (frame 0 copies frame 1)
    Trajectory ground_truth;          // empty when not available

    std::size_t size() const { return images.size(); }
    bool has_ground_truth() const { return !ground_truth.empty(); }
    bool has_depth() const { return !depths.empty(); }
    /// Throws InconsistentLengths / InvalidArgument.
    void validate() const;
};

RenderedScene generate_scene(const EnvironmentSpec& env, const SceneSpec& scene,
                             const RenderSettings& settings = {});

void write_dataset(const RenderedScene& scene, const std::filesystem::path& dir);
RenderedScene read_dataset(const std::filesystem::path& dir);

/// Mean speed over (t_a, t_b] from the per-frame readings, weighted by the
/// frame intervals. Used for triplets over gated frames.
double mean_velocity(const RenderedScene& scene, std::size_t a, std::size_t b);

/// Triplet of frames (a, b, c) with pair velocities from the readings.
ImageTriplet make_triplet(const RenderedScene& scene, std::size_t a, std::size_t b, std::size_t c);

/// All consecutive-frame triplets of a scene.
std::vector<ImageTriplet> scene_triplets(const RenderedScene& scene);

}  // namespace clslam
