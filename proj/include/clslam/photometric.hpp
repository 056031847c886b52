#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "clslam/geometry.hpp"
#include "clslam/image.hpp"

namespace clslam {

using ImagePtr = std::shared_ptr<const Image>;

/// Three consecutive (accepted) frames. The middle frame is the warp target.
struct ImageTriplet {
    std::array<ImagePtr, 3> frames;         // I_{t-2}, I_{t-1}, I_t
    std::array<double, 2> velocities{};     // m/s over (t-2 -> t-1) and (t-1 -> t)
    std::array<double, 3> timestamps{};     // seconds
    std::string env_id;
    std::string scene_id;
    int frame_index = 0;                    // index of I_t in its scene

    double dt(int pair) const { return timestamps[pair + 1] - timestamps[pair]; }
    /// Throws InvalidArgument when timestamps do not increase or a velocity is negative.
    void validate() const;
};

struct LossWeights {
    double smoothness = 0.001;  // gamma
    double velocity = 0.05;     // lambda
    double ssim_alpha = 0.85;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;

    void validate() const;
};

struct LossParts {
    double reprojection = 0;
    double smoothness = 0;
    double velocity = 0;
};

/// L = L_pr + gamma * L_sm + lambda * L_vel. Throws NonFinite on bad parts.
double total_loss(const LossParts& parts, const LossWeights& w);

// ---------------------------------------------------------------- warping

struct WarpResult {
    Image image;
    Mask valid;
    /// Bilinear cell used per pixel (-1 behind the camera). Together with the
    /// masks this identifies the smooth piece the warp is on.
    std::vector<std::int64_t> cell;
};

/// Synthesizes the target view by sampling `source` at K * T_target_to_source * d K^-1 p.
WarpResult warp_image(const Image& source, const DepthMap& target_depth,
                      const Pose3& target_to_source, const CameraIntrinsics& k);

/// Gradient of a scalar loss w.r.t. the warp inputs, given dL/d(warped image).
struct WarpGradient {
    Grid depth;           // dL/d(depth) per target pixel
    Mat3 rotation = Mat3::Zero();
    Vec3 translation = Vec3::Zero();
};

WarpGradient warp_image_backward(const Image& source, const DepthMap& target_depth,
                                 const Pose3& target_to_source, const CameraIntrinsics& k,
                                 const Grid& upstream);

// ------------------------------------------------------------ similarity

/// Per-pixel SSIM over a 3x3 box window with reflection padding.
Grid ssim(const Image& a, const Image& b, double c1 = 1e-4, double c2 = 9e-4);

/// d/db of sum_p upstream(p) * ssim(a, b)(p).
Grid ssim_backward(const Image& a, const Image& b, const Grid& upstream, double c1 = 1e-4,
                   double c2 = 9e-4);

/// alpha * (1 - SSIM) / 2 + (1 - alpha) * |I - I_hat|.
Grid photometric_dissimilarity(const Image& target, const Image& reconstructed, double alpha,
                               double c1 = 1e-4, double c2 = 9e-4);

Grid photometric_dissimilarity_backward(const Image& target, const Image& reconstructed,
                                        double alpha, const Grid& upstream, double c1 = 1e-4,
                                        double c2 = 9e-4);

// ---------------------------------------------------------- reprojection

struct ReprojectionResult {
    double loss = 0;
    Mask mask;                       // auto-mask (strict inequality)
    Grid min_error;                  // per-pixel minimum over warped sources
    std::vector<int> selected;       // argmin source per pixel, -1 where no valid source
    std::vector<Grid> warped_errors; // dissimilarity of each warped source
};

/// Per-pixel minimum reprojection error with auto-masking. `valid` may be
/// empty (all pixels valid) or hold one mask per warped image. Ties pick
/// the lowest source index. A non-null `fixed_mask` replaces the auto-mask
/// (used to evaluate the loss on a frozen pixel set).
ReprojectionResult reprojection_loss(const Image& target, std::span<const Image> sources,
                                     std::span<const Image> warped, std::span<const Mask> valid,
                                     const LossWeights& w, const Mask* fixed_mask = nullptr);

/// dL_pr/d(warped_k) for every warped source.
std::vector<Grid> reprojection_loss_backward(const Image& target, std::span<const Image> warped,
                                             const ReprojectionResult& forward,
                                             const LossWeights& w);

// ----------------------------------------------------------- smoothness

/// Edge-aware smoothness of mean-normalized disparity; the x and y terms are
/// each averaged over their own finite-difference domain.
double smoothness_loss(const DisparityMap& disparity, const Image& image);
Grid smoothness_loss_backward(const DisparityMap& disparity, const Image& image);

// -------------------------------------------------------------- velocity

/// sum_s | ||T_s|| - |v_s| * dt_s | over the two frame pairs of a triplet.
double velocity_loss(std::span<const Vec3, 2> translations, const ImageTriplet& triplet);
/// Gradient w.r.t. each translation (zero where ||T|| = 0).
std::array<Vec3, 2> velocity_loss_backward(std::span<const Vec3, 2> translations,
                                           const ImageTriplet& triplet);

}  // namespace clslam
