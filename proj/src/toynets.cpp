#include "clslam/toynets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <unsupported/Eigen/AutoDiff>

#include "clslam/rng.hpp"
#include "json.hpp"

namespace clslam {

const LayerSlot& ParamVector::slot(const std::string& name) const {
    for (const auto& s : layout) {
        if (s.name == name) return s;
    }
    throw Error(ErrorKind::InvalidArgument, "no parameter slot named " + name);
}

bool ParamVector::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::uint64_t ParamVector::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffU;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

void NetArch::validate() const {
    if (downsample <= 0 || image_height % downsample || image_width % downsample) {
        throw Error(ErrorKind::InvalidArgument, "image size must be divisible by the downsample factor");
    }
    if (low_height() % 4 || low_width() % 4 || low_height() < 4 || low_width() < 4) {
        throw Error(ErrorKind::InvalidArgument, "downsampled size must be a positive multiple of 4");
    }
    if (!(min_disparity > 0 && max_disparity > min_disparity)) {
        throw Error(ErrorKind::InvalidArgument, "bad disparity bounds");
    }
}

// ----------------------------------------------------------------- conv

Tensor Conv3x3::forward(std::span<const double> params, const Tensor& x) const {
    const int oh = (x.h - 1) / stride + 1;
    const int ow = (x.w - 1) / stride + 1;
    Tensor y(out, oh, ow);
    const double* wt = params.data() + offset;
    const double* bias = wt + static_cast<std::size_t>(out) * in * 9;
    for (int o = 0; o < out; ++o) {
        for (int yy = 0; yy < oh; ++yy) {
            for (int xx = 0; xx < ow; ++xx) {
                double s = bias[o];
                for (int i = 0; i < in; ++i) {
                    const double* k = wt + (static_cast<std::size_t>(o) * in + i) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int sy = yy * stride + ky - 1;
                        if (sy < 0 || sy >= x.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int sx = xx * stride + kx - 1;
                            if (sx < 0 || sx >= x.w) continue;
                            s += k[ky * 3 + kx] * x.at(i, sy, sx);
                        }
                    }
                }
                y.at(o, yy, xx) = s;
            }
        }
    }
    return y;
}

Tensor Conv3x3::backward(std::span<const double> params, const Tensor& x, const Tensor& gout,
                         std::span<double> gparams, bool want_input_grad) const {
    Tensor gx;
    if (want_input_grad) gx = Tensor(x.c, x.h, x.w);
    const double* wt = params.data() + offset;
    double* gw = gparams.data() + offset;
    double* gb = gw + static_cast<std::size_t>(out) * in * 9;
    for (int o = 0; o < out; ++o) {
        for (int yy = 0; yy < gout.h; ++yy) {
            for (int xx = 0; xx < gout.w; ++xx) {
                const double g = gout.at(o, yy, xx);
                if (g == 0.0) continue;
                gb[o] += g;
                for (int i = 0; i < in; ++i) {
                    const std::size_t kbase = (static_cast<std::size_t>(o) * in + i) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int sy = yy * stride + ky - 1;
                        if (sy < 0 || sy >= x.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int sx = xx * stride + kx - 1;
                            if (sx < 0 || sx >= x.w) continue;
                            gw[kbase + ky * 3 + kx] += g * x.at(i, sy, sx);
                            if (want_input_grad) gx.at(i, sy, sx) += g * wt[kbase + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    return gx;
}

namespace {

void tanh_inplace(Tensor& t) {
    for (auto& v : t.data) v = std::tanh(v);
}

void tanh_backward_inplace(Tensor& g, const Tensor& y) {
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= 1.0 - y.data[i] * y.data[i];
}

Tensor upsample2(const Tensor& x) {
    Tensor y(x.c, x.h * 2, x.w * 2);
    for (int c = 0; c < x.c; ++c)
        for (int yy = 0; yy < y.h; ++yy)
            for (int xx = 0; xx < y.w; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
    return y;
}

Tensor upsample2_adjoint(const Tensor& g, int h, int w) {
    Tensor out(g.c, h, w);
    for (int c = 0; c < g.c; ++c)
        for (int yy = 0; yy < g.h; ++yy)
            for (int xx = 0; xx < g.w; ++xx) out.at(c, yy / 2, xx / 2) += g.at(c, yy, xx);
    return out;
}

/// Block-average downsampling of the image plus a normalized row-coordinate channel.
void pooled_channel(const Image& img, int factor, Tensor& dst, int channel) {
    const double norm = 1.0 / (factor * factor);
    for (int y = 0; y < dst.h; ++y) {
        for (int x = 0; x < dst.w; ++x) {
            double s = 0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) s += img(y * factor + dy, x * factor + dx);
            dst.at(channel, y, x) = s * norm;
        }
    }
}

void row_channel(Tensor& dst, int channel) {
    for (int y = 0; y < dst.h; ++y) {
        const double v = 2.0 * (y + 0.5) / dst.h - 1.0;
        for (int x = 0; x < dst.w; ++x) dst.at(channel, y, x) = v;
    }
}

struct Lerp {
    int i0 = 0, i1 = 0;
    double f = 0;
};

Lerp upsample_coord(int dst, int factor, int n) {
    double src = (dst + 0.5) / factor - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    Lerp l;
    l.i0 = static_cast<int>(std::floor(src));
    l.i1 = std::min(l.i0 + 1, n - 1);
    l.f = src - l.i0;
    return l;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t add_slot(ParamVector& p, const std::string& name, std::size_t size) {
    const std::size_t off = p.values.size();
    p.layout.push_back({name, off, size});
    p.values.resize(off + size, 0.0);
    return off;
}

void fill_xavier(ParamVector& p, const Conv3x3& conv, Rng& rng, double gain = 1.0) {
    const double fan_in = conv.in * 9.0;
    const double fan_out = conv.out * 9.0;
    const double bound = gain * std::sqrt(6.0 / (fan_in + fan_out));
    const std::size_t nw = static_cast<std::size_t>(conv.out) * conv.in * 9;
    for (std::size_t i = 0; i < nw; ++i) p.values[conv.offset + i] = rng.uniform(-bound, bound);
}

}  // namespace

// ------------------------------------------------------------- DepthNet

DepthNetToy::DepthNetToy(NetArch arch) : arch_(arch) {
    arch_.validate();
    enc1_ = {2, arch_.depth_enc1, 2};
    enc2_ = {arch_.depth_enc1, arch_.depth_enc2, 2};
    dec1_ = {arch_.depth_enc2 + arch_.depth_enc1, arch_.depth_dec1, 1};
    dec2_ = {arch_.depth_dec1, 1, 1};
    enc1_.offset = add_slot(template_, "depth.enc1", enc1_.param_count());
    template_.frozen_prefix = template_.size();
    enc2_.offset = add_slot(template_, "depth.enc2", enc2_.param_count());
    dec1_.offset = add_slot(template_, "depth.dec1", dec1_.param_count());
    dec2_.offset = add_slot(template_, "depth.dec2", dec2_.param_count());
    bias_offset_ = add_slot(template_, "depth.out_bias",
                            static_cast<std::size_t>(arch_.low_height()) * arch_.low_width());
    total_ = template_.size();
}

ParamVector DepthNetToy::make_params() const { return template_; }

ParamVector DepthNetToy::init_params(std::uint64_t seed) const {
    ParamVector p = make_params();
    Rng rng(seed);
    fill_xavier(p, enc1_, rng);
    fill_xavier(p, enc2_, rng);
    fill_xavier(p, dec1_, rng);
    fill_xavier(p, dec2_, rng, 0.1);
    // Start near a few meters of depth instead of the 0.2 m sigmoid midpoint.
    p.values[dec2_.offset + static_cast<std::size_t>(dec2_.out) * dec2_.in * 9] = -3.5;
    return p;
}

DisparityMap DepthNetToy::forward(const Image& image, const ParamVector& p, DepthTape* tape) const {
    if (image.height() != arch_.image_height || image.width() != arch_.image_width) {
        throw Error(ErrorKind::DimensionMismatch, "depth net input size");
    }
    if (p.size() != total_) throw Error(ErrorKind::ShapeMismatch, "depth net parameter count");
    DepthTape local;
    DepthTape& t = tape ? *tape : local;
    const int lh = arch_.low_height();
    const int lw = arch_.low_width();
    t.input = Tensor(2, lh, lw);
    pooled_channel(image, arch_.downsample, t.input, 0);
    row_channel(t.input, 1);

    t.e1 = enc1_.forward(p.values, t.input);
    tanh_inplace(t.e1);
    t.e2 = enc2_.forward(p.values, t.e1);
    tanh_inplace(t.e2);
    const Tensor u1 = upsample2(t.e2);
    t.cat = Tensor(u1.c + t.e1.c, t.e1.h, t.e1.w);
    std::copy(u1.data.begin(), u1.data.end(), t.cat.data.begin());
    std::copy(t.e1.data.begin(), t.e1.data.end(), t.cat.data.begin() + static_cast<std::ptrdiff_t>(u1.data.size()));
    t.d1 = dec1_.forward(p.values, t.cat);
    tanh_inplace(t.d1);
    t.up = upsample2(t.d1);
    t.raw_low = dec2_.forward(p.values, t.up);
    for (std::size_t i = 0; i < t.raw_low.data.size(); ++i) t.raw_low.data[i] += p.values[bias_offset_ + i];

    const int f = arch_.downsample;
    t.raw = Grid(arch_.image_height, arch_.image_width);
    t.disparity = DisparityMap(arch_.image_height, arch_.image_width);
    const double span = arch_.max_disparity - arch_.min_disparity;
    for (int y = 0; y < arch_.image_height; ++y) {
        const Lerp ly = upsample_coord(y, f, lh);
        for (int x = 0; x < arch_.image_width; ++x) {
            const Lerp lx = upsample_coord(x, f, lw);
            const double v = (1 - ly.f) * ((1 - lx.f) * t.raw_low.at(0, ly.i0, lx.i0) + lx.f * t.raw_low.at(0, ly.i0, lx.i1)) +
                             ly.f * ((1 - lx.f) * t.raw_low.at(0, ly.i1, lx.i0) + lx.f * t.raw_low.at(0, ly.i1, lx.i1));
            t.raw(y, x) = v;
            t.disparity(y, x) = arch_.min_disparity + sigmoid(v) * span;
        }
    }
    return t.disparity;
}

void DepthNetToy::backward(const ParamVector& p, const DepthTape& t, const Grid& gdisp,
                           std::span<double> gparams) const {
    if (gparams.size() != total_ || p.size() != total_) throw Error(ErrorKind::ShapeMismatch, "depth gradient size");
    const int lh = arch_.low_height();
    const int lw = arch_.low_width();
    const int f = arch_.downsample;
    const double span = arch_.max_disparity - arch_.min_disparity;
    Tensor g_low(1, lh, lw);
    for (int y = 0; y < arch_.image_height; ++y) {
        const Lerp ly = upsample_coord(y, f, lh);
        for (int x = 0; x < arch_.image_width; ++x) {
            const double s = sigmoid(t.raw(y, x));
            const double g = gdisp(y, x) * span * s * (1 - s);
            if (g == 0.0) continue;
            const Lerp lx = upsample_coord(x, f, lw);
            g_low.at(0, ly.i0, lx.i0) += g * (1 - ly.f) * (1 - lx.f);
            g_low.at(0, ly.i0, lx.i1) += g * (1 - ly.f) * lx.f;
            g_low.at(0, ly.i1, lx.i0) += g * ly.f * (1 - lx.f);
            g_low.at(0, ly.i1, lx.i1) += g * ly.f * lx.f;
        }
    }
    for (std::size_t i = 0; i < g_low.data.size(); ++i) gparams[bias_offset_ + i] += g_low.data[i];

    const Tensor g_up = dec2_.backward(p.values, t.up, g_low, gparams, true);
    Tensor g_d1 = upsample2_adjoint(g_up, t.d1.h, t.d1.w);
    tanh_backward_inplace(g_d1, t.d1);
    const Tensor g_cat = dec1_.backward(p.values, t.cat, g_d1, gparams, true);

    const std::size_t n_u1 = static_cast<std::size_t>(t.e2.c) * t.e1.h * t.e1.w;
    Tensor g_u1(t.e2.c, t.e1.h, t.e1.w);
    std::copy(g_cat.data.begin(), g_cat.data.begin() + static_cast<std::ptrdiff_t>(n_u1), g_u1.data.begin());
    Tensor g_e1(t.e1.c, t.e1.h, t.e1.w);
    std::copy(g_cat.data.begin() + static_cast<std::ptrdiff_t>(n_u1), g_cat.data.end(), g_e1.data.begin());

    Tensor g_e2 = upsample2_adjoint(g_u1, t.e2.h, t.e2.w);
    tanh_backward_inplace(g_e2, t.e2);
    const Tensor g_e1b = enc2_.backward(p.values, t.e1, g_e2, gparams, true);
    for (std::size_t i = 0; i < g_e1.data.size(); ++i) g_e1.data[i] += g_e1b.data[i];
    tanh_backward_inplace(g_e1, t.e1);
    enc1_.backward(p.values, t.input, g_e1, gparams, false);
}

// -------------------------------------------------------------- PoseNet

PoseNetToy::PoseNetToy(NetArch arch) : arch_(arch) {
    arch_.validate();
    stem1_ = {3, arch_.pose_stem1, 2};
    stem2_ = {arch_.pose_stem1, arch_.pose_stem2, 2};
    feature_count_ = static_cast<std::size_t>(arch_.pose_stem2) * (arch_.low_height() / 4) * (arch_.low_width() / 4);
    stem1_.offset = add_slot(template_, "pose.stem1", stem1_.param_count());
    template_.frozen_prefix = template_.size();
    stem2_.offset = add_slot(template_, "pose.stem2", stem2_.param_count());
    head_offset_ = add_slot(template_, "pose.head", 6 * feature_count_ + 6);
    total_ = template_.size();
}

ParamVector PoseNetToy::make_params() const { return template_; }

ParamVector PoseNetToy::init_params(std::uint64_t seed, bool zero_head) const {
    ParamVector p = make_params();
    Rng rng(seed);
    fill_xavier(p, stem1_, rng);
    fill_xavier(p, stem2_, rng);
    if (!zero_head) {
        // Small but nonzero: an exactly zero twist gives no gradient through
        // the auto-mask or the translation norm.
        const double bound = 0.01 * std::sqrt(6.0 / (static_cast<double>(feature_count_) + 6.0));
        for (std::size_t i = 0; i < 6 * feature_count_; ++i) p.values[head_offset_ + i] = rng.uniform(-bound, bound);
    }
    return p;
}

Twist PoseNetToy::forward(const Image& a, const Image& b, const ParamVector& p, PoseTape* tape) const {
    require_same_shape(a, b, "pose net inputs differ in size");
    if (a.height() != arch_.image_height || a.width() != arch_.image_width) {
        throw Error(ErrorKind::DimensionMismatch, "pose net input size");
    }
    if (p.size() != total_) throw Error(ErrorKind::ShapeMismatch, "pose net parameter count");
    PoseTape local;
    PoseTape& t = tape ? *tape : local;
    t.input = Tensor(3, arch_.low_height(), arch_.low_width());
    pooled_channel(a, arch_.downsample, t.input, 0);
    pooled_channel(b, arch_.downsample, t.input, 1);
    row_channel(t.input, 2);
    t.s1 = stem1_.forward(p.values, t.input);
    tanh_inplace(t.s1);
    t.s2 = stem2_.forward(p.values, t.s1);
    tanh_inplace(t.s2);
    const double* w = p.values.data() + head_offset_;
    const double* bias = w + 6 * feature_count_;
    for (int o = 0; o < 6; ++o) {
        double s = bias[o];
        const double* row = w + o * feature_count_;
        for (std::size_t i = 0; i < feature_count_; ++i) s += row[i] * t.s2.data[i];
        t.head(o) = s;
    }
    Twist tw;
    tw.rotation = arch_.rotation_scale * t.head.head<3>();
    tw.translation = arch_.translation_scale * t.head.tail<3>();
    return tw;
}

void PoseNetToy::backward(const ParamVector& p, const PoseTape& t, const Vec6& g_twist,
                          std::span<double> gparams) const {
    if (gparams.size() != total_ || p.size() != total_) throw Error(ErrorKind::ShapeMismatch, "pose gradient size");
    Vec6 gh;
    gh << arch_.rotation_scale * g_twist.head<3>(), arch_.translation_scale * g_twist.tail<3>();
    const double* w = p.values.data() + head_offset_;
    double* gw = gparams.data() + head_offset_;
    double* gb = gw + 6 * feature_count_;
    Tensor g_s2(t.s2.c, t.s2.h, t.s2.w);
    for (int o = 0; o < 6; ++o) {
        const double g = gh(o);
        if (g == 0.0) continue;
        gb[o] += g;
        for (std::size_t i = 0; i < feature_count_; ++i) {
            gw[o * feature_count_ + i] += g * t.s2.data[i];
            g_s2.data[i] += g * w[o * feature_count_ + i];
        }
    }
    tanh_backward_inplace(g_s2, t.s2);
    Tensor g_s1 = stem2_.backward(p.values, t.s1, g_s2, gparams, true);
    tanh_backward_inplace(g_s1, t.s1);
    stem1_.backward(p.values, t.input, g_s1, gparams, false);
}

// ------------------------------------------------------ pose jacobian

PoseJacobian pose_with_jacobian(const Twist& xi, bool inverted) {
    using Deriv = Eigen::Matrix<double, 6, 1>;
    using AD = Eigen::AutoDiffScalar<Deriv>;
    Eigen::Matrix<AD, 3, 1> w, rho;
    for (int i = 0; i < 3; ++i) {
        w(i) = AD(xi.rotation(i), 6, i);
        rho(i) = AD(xi.translation(i), 6, 3 + i);
    }
    Eigen::Matrix<AD, 3, 3> r;
    Eigen::Matrix<AD, 3, 1> t;
    se3_exp_matrices<AD>(w, rho, r, t);
    if (inverted) {
        const Eigen::Matrix<AD, 3, 3> rt = r.transpose();
        t = -(rt * t);
        r = rt;
    }
    PoseJacobian j;
    for (int a = 0; a < 3; ++a) {
        j.translation(a) = t(a).value();
        for (int b = 0; b < 3; ++b) j.rotation(a, b) = r(a, b).value();
    }
    for (int k = 0; k < 6; ++k) {
        for (int a = 0; a < 3; ++a) {
            j.d_translation[k](a) = t(a).derivatives().size() ? t(a).derivatives()(k) : 0.0;
            for (int b = 0; b < 3; ++b) {
                j.d_rotation[k](a, b) = r(a, b).derivatives().size() ? r(a, b).derivatives()(k) : 0.0;
            }
        }
    }
    return j;
}

// ------------------------------------------------------ triplet loss

TripletLossGraph::TripletLossGraph(const DepthNetToy& depth, const PoseNetToy& pose,
                                   const CameraIntrinsics& k, const LossWeights& w)
    : depth_(depth), pose_(pose), k_(k), w_(w) {}

TripletLoss TripletLossGraph::record(const NetworkPair& params, const ImageTriplet& tri,
                                     const TripletMasks* frozen) {
    tri.validate();
    recorded_ = false;
    params_ = &params;
    triplet_ = &tri;
    const Image& target = *tri.frames[1];
    dtape_ = DepthTape{};
    depth_.forward(target, params.depth, &dtape_);
    depth_map_ = DepthMap(target.height(), target.width());
    for (std::size_t i = 0; i < depth_map_.size(); ++i) depth_map_[i] = 1.0 / dtape_.disparity[i];

    twists_[0] = pose_.forward(*tri.frames[0], *tri.frames[1], params.pose, &ptapes_[0]);
    twists_[1] = pose_.forward(*tri.frames[1], *tri.frames[2], params.pose, &ptapes_[1]);
    warps_[0] = pose_with_jacobian(twists_[0], false);
    warps_[1] = pose_with_jacobian(twists_[1], true);

    const std::array<Image, 2> sources{*tri.frames[0], *tri.frames[2]};
    std::uint64_t sig = 1469598103934665603ULL;
    auto mix = [&sig](std::uint64_t v) { sig = (sig ^ mix64(v)) * 1099511628211ULL; };
    for (int s = 0; s < 2; ++s) {
        WarpResult wr = warp_image(sources[s], depth_map_, Pose3(warps_[s].rotation, warps_[s].translation), k_);
        for (std::size_t i = 0; i < wr.cell.size(); ++i) {
            mix(static_cast<std::uint64_t>(wr.cell[i]));
            mix(wr.image[i] > target[i] ? 1 : (wr.image[i] < target[i] ? 2 : 3));
        }
        warped_[s] = std::move(wr.image);
        valid_[s] = frozen ? frozen->valid[s] : std::move(wr.valid);
    }
    reproj_ = reprojection_loss(target, sources, warped_, valid_, w_, frozen ? &frozen->automask : nullptr);

    TripletLoss out;
    out.parts.reprojection = reproj_.loss;
    out.parts.smoothness = smoothness_loss(dtape_.disparity, target);
    const std::array<Vec3, 2> trans{warps_[0].translation, warps_[1].translation};
    out.parts.velocity = velocity_loss(trans, tri);
    out.total = total_loss(out.parts, w_);

    for (std::size_t i = 0; i < reproj_.mask.size(); ++i) {
        mix(reproj_.mask[i] ? 1 : 0);
        mix(static_cast<std::uint64_t>(reproj_.selected[i] + 1));
    }
    for (int s = 0; s < 2; ++s) {
        for (std::size_t i = 0; i < valid_[s].size(); ++i) mix(valid_[s][i] ? 1 : 0);
        mix(trans[s].norm() > std::abs(tri.velocities[s]) * tri.dt(s) ? 1 : 0);
    }
    const DisparityMap& d = dtape_.disparity;
    for (int r = 0; r < d.height(); ++r) {
        for (int c = 0; c < d.width(); ++c) {
            if (c + 1 < d.width()) mix(d(r, c + 1) > d(r, c) ? 1 : 0);
            if (r + 1 < d.height()) mix(d(r + 1, c) > d(r, c) ? 1 : 0);
        }
    }
    signature_ = sig;
    recorded_ = true;
    return out;
}

void TripletLossGraph::backward(double scale, NetworkPair& grad) const {
    if (!recorded_) throw Error(ErrorKind::GraphNotRecorded, "backward called before record");
    const ImageTriplet& tri = *triplet_;
    const Image& target = *tri.frames[1];
    const std::array<const Image*, 2> sources{tri.frames[0].get(), tri.frames[2].get()};

    std::vector<Grid> g_warped = reprojection_loss_backward(target, warped_, reproj_, w_);
    Grid g_depth(target.height(), target.width());
    std::array<Vec6, 2> g_twist{Vec6::Zero(), Vec6::Zero()};
    for (int s = 0; s < 2; ++s) {
        for (auto& v : g_warped[s].values()) v *= scale;
        const WarpGradient wg = warp_image_backward(
            *sources[s], depth_map_, Pose3(warps_[s].rotation, warps_[s].translation), k_, g_warped[s]);
        for (std::size_t i = 0; i < g_depth.size(); ++i) g_depth[i] += wg.depth[i];
        for (int j = 0; j < 6; ++j) {
            g_twist[s](j) += (wg.rotation.array() * warps_[s].d_rotation[j].array()).sum() +
                             wg.translation.dot(warps_[s].d_translation[j]);
        }
    }
    const std::array<Vec3, 2> trans{warps_[0].translation, warps_[1].translation};
    const auto g_vel = velocity_loss_backward(trans, tri);
    for (int s = 0; s < 2; ++s) {
        for (int j = 0; j < 6; ++j) g_twist[s](j) += scale * w_.velocity * g_vel[s].dot(warps_[s].d_translation[j]);
    }

    const Grid g_sm = smoothness_loss_backward(dtape_.disparity, target);
    Grid g_disp(target.height(), target.width());
    for (std::size_t i = 0; i < g_disp.size(); ++i) {
        const double d = dtape_.disparity[i];
        g_disp[i] = -g_depth[i] / (d * d) + scale * w_.smoothness * g_sm[i];
    }
    depth_.backward(params_->depth, dtape_, g_disp, grad.depth.values);
    for (int s = 0; s < 2; ++s) pose_.backward(params_->pose, ptapes_[s], g_twist[s], grad.pose.values);
}

NetworkPair zero_like(const NetworkPair& p) {
    NetworkPair z = p;
    std::fill(z.depth.values.begin(), z.depth.values.end(), 0.0);
    std::fill(z.pose.values.begin(), z.pose.values.end(), 0.0);
    return z;
}

void apply_freeze(NetworkPair& grad, const NetworkPair& params) {
    std::fill_n(grad.depth.values.begin(), params.depth.frozen_prefix, 0.0);
    std::fill_n(grad.pose.values.begin(), params.pose.frozen_prefix, 0.0);
}

BatchGradient batch_loss_gradient(const DepthNetToy& depth, const PoseNetToy& pose,
                                  const CameraIntrinsics& k, const LossWeights& w,
                                  const NetworkPair& params, std::span<const ImageTriplet> batch) {
    if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "empty batch");
    BatchGradient out;
    out.grad = zero_like(params);
    const double scale = 1.0 / static_cast<double>(batch.size());
    TripletLossGraph graph(depth, pose, k, w);
    for (const auto& tri : batch) {
        const TripletLoss l = graph.record(params, tri);
        out.per_triplet.push_back(l);
        out.loss += scale * l.total;
        graph.backward(scale, out.grad);
    }
    apply_freeze(out.grad, params);
    return out;
}

double batch_loss(const DepthNetToy& depth, const PoseNetToy& pose, const CameraIntrinsics& k,
                  const LossWeights& w, const NetworkPair& params, std::span<const ImageTriplet> batch) {
    if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "empty batch");
    TripletLossGraph graph(depth, pose, k, w);
    double sum = 0;
    for (const auto& tri : batch) sum += graph.record(params, tri).total;
    return sum / static_cast<double>(batch.size());
}

// ----------------------------------------------------------------- Adam

AdamState AdamState::for_params(const ParamVector& p, double lr) {
    AdamState s;
    s.m.assign(p.size(), 0.0);
    s.v.assign(p.size(), 0.0);
    s.learning_rate = lr;
    return s;
}

void adam_step(ParamVector& params, std::span<const double> grads, AdamState& s) {
    if (grads.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
        throw Error(ErrorKind::ShapeMismatch, "adam: parameter/gradient/state sizes differ");
    }
    ++s.step;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        s.m[i] = s.beta1 * s.m[i] + (1 - s.beta1) * g;
        s.v[i] = s.beta2 * s.v[i] + (1 - s.beta2) * g * g;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        params.values[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.epsilon);
    }
}

std::vector<double> finite_difference_gradient(const std::function<double(const std::vector<double>&)>& loss,
                                               const std::vector<double>& params, double h,
                                               std::span<const std::size_t> indices) {
    if (!(h > 0)) throw Error(ErrorKind::InvalidArgument, "finite difference step must be positive");
    std::vector<double> grad(params.size(), 0.0);
    std::vector<double> work = params;
    auto one = [&](std::size_t i) {
        work[i] = params[i] + h;
        const double lp = loss(work);
        work[i] = params[i] - h;
        const double lm = loss(work);
        work[i] = params[i];
        grad[i] = (lp - lm) / (2 * h);
    };
    if (indices.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) one(i);
    } else {
        for (std::size_t i : indices) one(i);
    }
    return grad;
}

GradientCheckReport gradient_check(const DepthNetToy& depth, const PoseNetToy& pose, const CameraIntrinsics& k,
                                   const LossWeights& w, const NetworkPair& params, const ImageTriplet& triplet,
                                   std::size_t count, double h, std::uint64_t seed, double floor) {
    TripletLossGraph graph(depth, pose, k, w);
    graph.record(params, triplet);
    const std::uint64_t base = graph.piece_signature();
    NetworkPair grad = zero_like(params);
    graph.backward(1.0, grad);

    const std::size_t nd = params.depth.size();
    const std::size_t total = nd + params.pose.size();
    GradientCheckReport rep;
    Rng rng(seed);
    NetworkPair work = params;
    auto value = [&](std::size_t i) -> double& { return i < nd ? work.depth.values[i] : work.pose.values[i - nd]; };
    const std::size_t max_draws = 50 * count;
    for (std::size_t draw = 0; rep.checked < count && draw < max_draws; ++draw) {
        const std::size_t i = rng.below(total);
        const double orig = value(i);
        TripletLossGraph g(depth, pose, k, w);
        value(i) = orig + h;
        const double lp = g.record(work, triplet).total;
        const bool same_p = g.piece_signature() == base;
        value(i) = orig - h;
        const double lm = g.record(work, triplet).total;
        const bool same_m = g.piece_signature() == base;
        value(i) = orig;
        if (!same_p || !same_m) {
            ++rep.skipped;
            continue;
        }
        const double numeric = (lp - lm) / (2 * h);
        const double analytic = i < nd ? grad.depth.values[i] : grad.pose.values[i - nd];
        const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
        ++rep.checked;
        if (err >= rep.max_relative_error) {
            rep.max_relative_error = err;
            rep.worst_index = i;
            rep.worst_analytic = analytic;
            rep.worst_numeric = numeric;
        }
    }
    return rep;
}

// ----------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'C', 'L', 'S', 'L', 'P', 'V', '0', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffU);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error(ErrorKind::ParseError, "checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

nlohmann::json arch_json(const NetArch& a) {
    return {{"image_height", a.image_height}, {"image_width", a.image_width}, {"downsample", a.downsample},
            {"depth_enc1", a.depth_enc1},     {"depth_enc2", a.depth_enc2},   {"depth_dec1", a.depth_dec1},
            {"pose_stem1", a.pose_stem1},     {"pose_stem2", a.pose_stem2},   {"min_disparity", a.min_disparity},
            {"max_disparity", a.max_disparity}, {"rotation_scale", a.rotation_scale},
            {"translation_scale", a.translation_scale}};
}

NetArch arch_from_json(const nlohmann::json& j) {
    NetArch a;
    a.image_height = j.at("image_height");
    a.image_width = j.at("image_width");
    a.downsample = j.at("downsample");
    a.depth_enc1 = j.at("depth_enc1");
    a.depth_enc2 = j.at("depth_enc2");
    a.depth_dec1 = j.at("depth_dec1");
    a.pose_stem1 = j.at("pose_stem1");
    a.pose_stem2 = j.at("pose_stem2");
    a.min_disparity = j.at("min_disparity");
    a.max_disparity = j.at("max_disparity");
    a.rotation_scale = j.at("rotation_scale");
    a.translation_scale = j.at("translation_scale");
    return a;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const NetArch& arch, const NetworkPair& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    const nlohmann::json header = {{"arch", arch_json(arch)},
                                   {"depth_count", params.depth.size()},
                                   {"pose_count", params.pose.size()},
                                   {"depth_frozen_prefix", params.depth.frozen_prefix},
                                   {"pose_frozen_prefix", params.pose.frozen_prefix}};
    const std::string h = header.dump();
    os.write(kMagic, sizeof kMagic);
    put_u64(os, h.size());
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    put_u64(os, params.depth.size() + params.pose.size());
    for (const auto* vec : {&params.depth.values, &params.pose.values}) {
        for (double v : *vec) put_u64(os, std::bit_cast<std::uint64_t>(v));
    }
    if (!os) throw Error(ErrorKind::IoError, "write failed: " + path.string());
}

std::pair<NetArch, NetworkPair> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::MissingFile, path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw Error(ErrorKind::ParseError, "not a parameter checkpoint: " + path.string());
    }
    const std::uint64_t hlen = get_u64(is);
    std::string h(hlen, '\0');
    if (!is.read(h.data(), static_cast<std::streamsize>(hlen))) throw Error(ErrorKind::ParseError, "checkpoint header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(h);
    } catch (const std::exception& e) {
        throw Error(ErrorKind::ParseError, std::string("checkpoint header: ") + e.what());
    }
    const NetArch arch = arch_from_json(header.at("arch"));
    NetworkPair p{DepthNetToy(arch).make_params(), PoseNetToy(arch).make_params()};
    const std::size_t nd = header.at("depth_count");
    const std::size_t np = header.at("pose_count");
    if (nd != p.depth.size() || np != p.pose.size() || get_u64(is) != nd + np) {
        throw Error(ErrorKind::ParseError, "checkpoint counts do not match architecture");
    }
    for (auto* vec : {&p.depth.values, &p.pose.values}) {
        for (double& v : *vec) v = std::bit_cast<double>(get_u64(is));
    }
    p.depth.frozen_prefix = header.at("depth_frozen_prefix");
    p.pose.frozen_prefix = header.at("pose_frozen_prefix");
    return {arch, p};
}

}  // namespace clslam
