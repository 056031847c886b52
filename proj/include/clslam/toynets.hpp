#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clslam/geometry.hpp"
#include "clslam/image.hpp"
#include "clslam/photometric.hpp"

namespace clslam {

/// Named slice of a flat parameter array.
struct LayerSlot {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Flat parameter array with a layer layout. The first `frozen_prefix`
/// entries (the encoder stem) receive zero gradient when freezing is on.
struct ParamVector {
    std::vector<double> values;
    std::vector<LayerSlot> layout;
    std::size_t frozen_prefix = 0;

    std::size_t size() const { return values.size(); }
    const LayerSlot& slot(const std::string& name) const;
    bool all_finite() const;
    /// FNV-1a over the raw bytes of `values`; used for hand-off checks.
    std::uint64_t checksum() const;

    friend bool operator==(const ParamVector& a, const ParamVector& b) { return a.values == b.values; }
};

/// C x H x W activations, row-major per channel.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
    double& at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
    double at(int ch, int y, int x) const { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

/// Shared architecture description for the toy DepthNet and PoseNet.
struct NetArch {
    int image_height = 48;
    int image_width = 96;
    int downsample = 4;
    int depth_enc1 = 8;
    int depth_enc2 = 16;
    int depth_dec1 = 8;
    int pose_stem1 = 8;
    int pose_stem2 = 16;
    double min_disparity = 1e-4;
    double max_disparity = 10.0;  // min depth 0.1 m
    double rotation_scale = 0.1;
    double translation_scale = 1.0;

    int low_height() const { return image_height / downsample; }
    int low_width() const { return image_width / downsample; }
    void validate() const;
    friend bool operator==(const NetArch&, const NetArch&) = default;
};

/// 3x3 convolution, zero padding 1, given stride. Parameters live in a ParamVector slot.
struct Conv3x3 {
    int in = 0, out = 0, stride = 1;
    std::size_t offset = 0;

    std::size_t param_count() const { return static_cast<std::size_t>(out) * in * 9 + out; }
    Tensor forward(std::span<const double> params, const Tensor& x) const;
    /// Accumulates parameter gradients into `gparams`; returns dL/dx when wanted.
    Tensor backward(std::span<const double> params, const Tensor& x, const Tensor& gout,
                    std::span<double> gparams, bool want_input_grad) const;
};

/// Forward activations kept for the backward pass.
struct DepthTape {
    Tensor input, e1, e2, cat, d1, up, raw_low;
    Grid raw;
    DisparityMap disparity;
};

/// Encoder-decoder in miniature: two strided convs, two upsampling stages with
/// one skip connection, a per-pixel output bias, and a bounded sigmoid head.
class DepthNetToy {
public:
    explicit DepthNetToy(NetArch arch);

    const NetArch& arch() const { return arch_; }
    ParamVector make_params() const;  // zero-filled, layout set
    ParamVector init_params(std::uint64_t seed) const;

    DisparityMap forward(const Image& image, const ParamVector& p, DepthTape* tape = nullptr) const;
    /// Accumulates dL/dparams from dL/d(disparity).
    void backward(const ParamVector& p, const DepthTape& tape, const Grid& grad_disparity,
                  std::span<double> gparams) const;

private:
    NetArch arch_;
    Conv3x3 enc1_, enc2_, dec1_, dec2_;
    std::size_t bias_offset_ = 0;
    std::size_t total_ = 0;
    ParamVector template_;
};

struct PoseTape {
    Tensor input, s1, s2;
    Vec6 head = Vec6::Zero();
};

/// Shared two-layer stem on the stacked image pair plus a linear head to a twist.
/// The prediction is the motion of the second camera in the first camera's frame.
class PoseNetToy {
public:
    explicit PoseNetToy(NetArch arch);

    const NetArch& arch() const { return arch_; }
    ParamVector make_params() const;
    /// `zero_head` gives an identity-motion network before any training.
    ParamVector init_params(std::uint64_t seed, bool zero_head = false) const;

    Twist forward(const Image& a, const Image& b, const ParamVector& p, PoseTape* tape = nullptr) const;
    void backward(const ParamVector& p, const PoseTape& tape, const Vec6& grad_twist,
                  std::span<double> gparams) const;

private:
    NetArch arch_;
    Conv3x3 stem1_, stem2_;
    std::size_t head_offset_ = 0;
    std::size_t feature_count_ = 0;
    std::size_t total_ = 0;
    ParamVector template_;
};

/// Rotation/translation of exp(twist) (optionally inverted) with their
/// derivatives w.r.t. the six twist coordinates.
struct PoseJacobian {
    Mat3 rotation;
    Vec3 translation;
    std::array<Mat3, 6> d_rotation;
    std::array<Vec3, 6> d_translation;
};
PoseJacobian pose_with_jacobian(const Twist& xi, bool inverted);

struct NetworkPair {
    ParamVector depth;
    ParamVector pose;
};

struct TripletLoss {
    LossParts parts;
    double total = 0;
};

/// Discrete pixel sets of a recorded loss. The loss is piecewise smooth in
/// the parameters; freezing these sets gives the smooth piece.
struct TripletMasks {
    Mask automask;
    std::array<Mask, 2> valid;
};

/// Forward record of the full self-supervised loss for one triplet.
/// Target is the middle frame; sources are the outer frames.
class TripletLossGraph {
public:
    TripletLossGraph(const DepthNetToy& depth, const PoseNetToy& pose, const CameraIntrinsics& k,
                     const LossWeights& w);

    TripletLoss record(const NetworkPair& params, const ImageTriplet& triplet,
                       const TripletMasks* frozen = nullptr);
    /// Gradients of the recorded total loss scaled by `scale`, accumulated into
    /// `grad`. Frozen prefixes are not zeroed here. Throws GraphNotRecorded.
    void backward(double scale, NetworkPair& grad) const;

    const DisparityMap& disparity() const { return dtape_.disparity; }
    const std::array<Twist, 2>& twists() const { return twists_; }
    TripletMasks masks() const { return {reproj_.mask, valid_}; }
    /// Hash of every discrete choice in the recorded loss (masks, argmin,
    /// bilinear cells, signs inside absolute values). Equal signatures at two
    /// parameter points mean the loss is smooth between them.
    std::uint64_t piece_signature() const { return signature_; }

private:
    const DepthNetToy& depth_;
    const PoseNetToy& pose_;
    CameraIntrinsics k_;
    LossWeights w_;
    bool recorded_ = false;

    const NetworkPair* params_ = nullptr;
    const ImageTriplet* triplet_ = nullptr;
    DepthTape dtape_;
    std::array<PoseTape, 2> ptapes_;
    std::array<Twist, 2> twists_;
    std::array<PoseJacobian, 2> warps_;  // target -> source for sources (t-2, t)
    std::array<Image, 2> warped_;
    std::array<Mask, 2> valid_;
    DepthMap depth_map_;
    ReprojectionResult reproj_;
    std::uint64_t signature_ = 0;
};

NetworkPair zero_like(const NetworkPair& p);
/// Zeroes the frozen prefix of each gradient vector.
void apply_freeze(NetworkPair& grad, const NetworkPair& params);

/// Mean total loss over a batch and its gradient (frozen prefixes zeroed).
struct BatchGradient {
    double loss = 0;
    std::vector<TripletLoss> per_triplet;
    NetworkPair grad;
};
BatchGradient batch_loss_gradient(const DepthNetToy& depth, const PoseNetToy& pose,
                                  const CameraIntrinsics& k, const LossWeights& w,
                                  const NetworkPair& params, std::span<const ImageTriplet> batch);
double batch_loss(const DepthNetToy& depth, const PoseNetToy& pose, const CameraIntrinsics& k,
                  const LossWeights& w, const NetworkPair& params, std::span<const ImageTriplet> batch);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 1e-4;

    static AdamState for_params(const ParamVector& p, double lr);
};

/// Standard Adam with bias correction; throws ShapeMismatch on size mismatch.
void adam_step(ParamVector& params, std::span<const double> grads, AdamState& state);

/// Central differences (L(theta + h e_i) - L(theta - h e_i)) / 2h over the
/// requested indices (all indices when `indices` is empty).
std::vector<double> finite_difference_gradient(const std::function<double(const std::vector<double>&)>& loss,
                                               const std::vector<double>& params, double h,
                                               std::span<const std::size_t> indices = {});

/// Backward pass vs central differences on randomly drawn parameters of both
/// networks. Parameters whose stencil crosses a kink of the loss (different
/// piece signature at theta +- h) are skipped and redrawn. Relative error is
/// |a - n| / max(|a|, |n|, floor); the floor sits above the round-off noise of
/// the numeric derivative.
struct GradientCheckReport {
    std::size_t checked = 0;
    std::size_t skipped = 0;
    double max_relative_error = 0;
    std::size_t worst_index = 0;  // into depth params followed by pose params
    double worst_analytic = 0;
    double worst_numeric = 0;
};
GradientCheckReport gradient_check(const DepthNetToy& depth, const PoseNetToy& pose, const CameraIntrinsics& k,
                                   const LossWeights& w, const NetworkPair& params, const ImageTriplet& triplet,
                                   std::size_t count, double h, std::uint64_t seed, double floor = 1e-5);

/// Little-endian checkpoint: magic, JSON header, count, float64 values.
void write_checkpoint(const std::filesystem::path& path, const NetArch& arch, const NetworkPair& params);
std::pair<NetArch, NetworkPair> read_checkpoint(const std::filesystem::path& path);

}  // namespace clslam
