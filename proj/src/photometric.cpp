#include "clslam/photometric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace clslam {

double Grid::mean() const {
    if (data_.empty()) return 0.0;
    return static_cast<double>(std::accumulate(data_.begin(), data_.end(), 0.0L)) / static_cast<double>(data_.size());
}

bool Image::in_range() const {
    return std::all_of(values().begin(), values().end(),
                       [](double v) { return v >= 0.0 && v <= 1.0; });
}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), 1));
}

void ImageTriplet::validate() const {
    for (const auto& f : frames) {
        if (!f) throw Error(ErrorKind::InvalidArgument, "triplet frame missing");
    }
    if (!(timestamps[0] < timestamps[1] && timestamps[1] < timestamps[2])) {
        throw Error(ErrorKind::InvalidArgument, "triplet timestamps must strictly increase");
    }
    if (velocities[0] < 0 || velocities[1] < 0) {
        throw Error(ErrorKind::InvalidArgument, "negative velocity");
    }
}

void LossWeights::validate() const {
    if (smoothness < 0 || velocity < 0) throw Error(ErrorKind::InvalidArgument, "negative loss weight");
    if (ssim_alpha < 0 || ssim_alpha > 1) throw Error(ErrorKind::InvalidArgument, "alpha outside [0,1]");
    if (!(c1 > 0 && c2 > 0)) throw Error(ErrorKind::InvalidArgument, "SSIM constants must be positive");
}

double total_loss(const LossParts& p, const LossWeights& w) {
    for (double v : {p.reprojection, p.smoothness, p.velocity}) {
        if (!std::isfinite(v) || v < 0) throw Error(ErrorKind::NonFinite, "loss part " + std::to_string(v));
    }
    const double l = p.reprojection + w.smoothness * p.smoothness + w.velocity * p.velocity;
    if (!std::isfinite(l)) throw Error(ErrorKind::NonFinite, "total loss");
    return l;
}

// ---------------------------------------------------------------- warping

namespace {

constexpr double kBorderTol = 1e-6;
constexpr double kMinZ = 1e-6;

struct Sample {
    double value = 0;
    double du = 0;  // d value / d u
    double dv = 0;
    std::int64_t cell = 0;
};

/// Bilinear sample with coordinates clamped to the image; the derivative in a
/// clamped axis is zero.
Sample bilinear(const Grid& img, double u, double v) {
    const int w = img.width();
    const int h = img.height();
    bool clamped_u = false;
    bool clamped_v = false;
    if (u < 0) { u = 0; clamped_u = true; }
    if (u > w - 1) { u = w - 1; clamped_u = true; }
    if (v < 0) { v = 0; clamped_v = true; }
    if (v > h - 1) { v = h - 1; clamped_v = true; }
    int u0 = std::min(static_cast<int>(std::floor(u)), std::max(w - 2, 0));
    int v0 = std::min(static_cast<int>(std::floor(v)), std::max(h - 2, 0));
    const int u1 = std::min(u0 + 1, w - 1);
    const int v1 = std::min(v0 + 1, h - 1);
    const double fu = u - u0;
    const double fv = v - v0;
    const double i00 = img(v0, u0);
    const double i01 = img(v0, u1);
    const double i10 = img(v1, u0);
    const double i11 = img(v1, u1);
    Sample s;
    s.value = (1 - fu) * (1 - fv) * i00 + fu * (1 - fv) * i01 + (1 - fu) * fv * i10 + fu * fv * i11;
    s.du = clamped_u ? 0.0 : (1 - fv) * (i01 - i00) + fv * (i11 - i10);
    s.dv = clamped_v ? 0.0 : (1 - fu) * (i10 - i00) + fu * (i11 - i01);
    s.cell = ((static_cast<std::int64_t>(v0) * w + u0) << 2) | (clamped_u ? 1 : 0) | (clamped_v ? 2 : 0);
    return s;
}

struct Projection {
    Vec3 ray;    // K^-1 p
    Vec3 point;  // point in source frame
    double u = 0;
    double v = 0;
    bool in_front = false;
    bool inside = false;
};

Projection project_pixel(int r, int c, double depth, const Mat3& rot, const Vec3& t,
                         const CameraIntrinsics& k) {
    Projection p;
    p.ray = Vec3((c - k.cx) / k.fx, (r - k.cy) / k.fy, 1.0);
    p.point = rot * (depth * p.ray) + t;
    p.in_front = p.point.z() > kMinZ;
    if (!p.in_front) return p;
    p.u = k.fx * p.point.x() / p.point.z() + k.cx;
    p.v = k.fy * p.point.y() / p.point.z() + k.cy;
    p.inside = p.u >= -kBorderTol && p.u <= k.width - 1 + kBorderTol && p.v >= -kBorderTol &&
               p.v <= k.height - 1 + kBorderTol;
    return p;
}

void check_warp_inputs(const Image& source, const DepthMap& depth, const CameraIntrinsics& k) {
    require_same_shape(source, depth, "warp: source and depth differ in size");
    if (source.width() != k.width || source.height() != k.height) {
        throw Error(ErrorKind::DimensionMismatch, "warp: image does not match intrinsics");
    }
}

}  // namespace

WarpResult warp_image(const Image& source, const DepthMap& depth, const Pose3& t_ts,
                      const CameraIntrinsics& k) {
    check_warp_inputs(source, depth, k);
    const Mat3 rot = t_ts.rotation();
    const Vec3& t = t_ts.translation();
    WarpResult out{Image(source.height(), source.width()), Mask(source.height(), source.width(), false),
                   std::vector<std::int64_t>(source.size(), -1)};
    for (int r = 0; r < source.height(); ++r) {
        for (int c = 0; c < source.width(); ++c) {
            const double d = depth(r, c);
            if (!(d > 0)) throw Error(ErrorKind::NonPositiveDepth, "warp: depth must be positive");
            const Projection p = project_pixel(r, c, d, rot, t, k);
            if (!p.in_front) continue;
            const Sample smp = bilinear(source, p.u, p.v);
            const std::size_t i = static_cast<std::size_t>(r) * source.width() + c;
            out.image[i] = smp.value;
            out.cell[i] = smp.cell;
            out.valid.set(i, p.inside);
        }
    }
    return out;
}

WarpGradient warp_image_backward(const Image& source, const DepthMap& depth, const Pose3& t_ts,
                                 const CameraIntrinsics& k, const Grid& upstream) {
    check_warp_inputs(source, depth, k);
    require_same_shape(source, upstream, "warp backward: upstream size");
    const Mat3 rot = t_ts.rotation();
    const Vec3& t = t_ts.translation();
    WarpGradient g;
    g.depth = Grid(source.height(), source.width());
    for (int r = 0; r < source.height(); ++r) {
        for (int c = 0; c < source.width(); ++c) {
            const double up = upstream(r, c);
            if (up == 0.0) continue;
            const double d = depth(r, c);
            const Projection p = project_pixel(r, c, d, rot, t, k);
            if (!p.in_front) continue;
            const Sample s = bilinear(source, p.u, p.v);
            const double gu = up * s.du;
            const double gv = up * s.dv;
            const double z = p.point.z();
            const Vec3 g_point(gu * k.fx / z, gv * k.fy / z,
                               -(gu * k.fx * p.point.x() + gv * k.fy * p.point.y()) / (z * z));
            g.translation += g_point;
            g.rotation += g_point * (d * p.ray).transpose();
            g.depth(r, c) = (rot.transpose() * g_point).dot(p.ray);
        }
    }
    return g;
}

// ------------------------------------------------------------ similarity

namespace {

int reflect(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
}

/// 3x3 mean with reflection padding.
Grid box3(const Grid& x) {
    const int h = x.height();
    const int w = x.width();
    Grid out(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double s = 0;
            for (int dr = -1; dr <= 1; ++dr) {
                const int rr = reflect(r + dr, h);
                for (int dc = -1; dc <= 1; ++dc) s += x(rr, reflect(c + dc, w));
            }
            out(r, c) = s / 9.0;
        }
    }
    return out;
}

/// Adjoint of box3.
Grid box3_adjoint(const Grid& g) {
    const int h = g.height();
    const int w = g.width();
    Grid out(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double v = g(r, c) / 9.0;
            if (v == 0.0) continue;
            for (int dr = -1; dr <= 1; ++dr) {
                const int rr = reflect(r + dr, h);
                for (int dc = -1; dc <= 1; ++dc) out(rr, reflect(c + dc, w)) += v;
            }
        }
    }
    return out;
}

struct SsimStats {
    Grid mx, my, exx, eyy, exy;
};

SsimStats ssim_stats(const Grid& a, const Grid& b) {
    Grid aa(a.height(), a.width()), bb(a.height(), a.width()), ab(a.height(), a.width());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    return {box3(a), box3(b), box3(aa), box3(bb), box3(ab)};
}

void check_ssim_inputs(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "ssim: images differ in size");
    if (a.height() < 2 || a.width() < 2) throw Error(ErrorKind::DimensionMismatch, "ssim: image too small");
}

}  // namespace

Grid ssim(const Image& a, const Image& b, double c1, double c2) {
    check_ssim_inputs(a, b);
    const SsimStats s = ssim_stats(a, b);
    Grid out(a.height(), a.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double mx = s.mx[i], my = s.my[i];
        const double sxx = s.exx[i] - mx * mx;
        const double syy = s.eyy[i] - my * my;
        const double sxy = s.exy[i] - mx * my;
        out[i] = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    }
    return out;
}

Grid ssim_backward(const Image& a, const Image& b, const Grid& upstream, double c1, double c2) {
    check_ssim_inputs(a, b);
    const SsimStats s = ssim_stats(a, b);
    const int h = a.height();
    const int w = a.width();
    Grid g_mean(h, w), g_sq(h, w), g_cross(h, w);
    for (std::size_t i = 0; i < upstream.size(); ++i) {
        const double up = upstream[i];
        if (up == 0.0) continue;
        const double mx = s.mx[i], my = s.my[i];
        const double sxx = s.exx[i] - mx * mx;
        const double syy = s.eyy[i] - my * my;
        const double sxy = s.exy[i] - mx * my;
        const double n1 = 2 * mx * my + c1;
        const double n2 = 2 * sxy + c2;
        const double d1 = mx * mx + my * my + c1;
        const double d2 = sxx + syy + c2;
        const double den = d1 * d2;
        const double val = n1 * n2 / den;
        g_mean[i] = up * ((2 * mx * n2 - 2 * mx * n1) / den - val * (2 * my / d1 - 2 * my / d2));
        g_sq[i] = up * (-val / d2);
        g_cross[i] = up * (2 * n1 / den);
    }
    const Grid am = box3_adjoint(g_mean);
    const Grid as = box3_adjoint(g_sq);
    const Grid ac = box3_adjoint(g_cross);
    Grid out(h, w);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = am[i] + 2 * b[i] * as[i] + a[i] * ac[i];
    return out;
}

Grid photometric_dissimilarity(const Image& target, const Image& rec, double alpha, double c1,
                               double c2) {
    const Grid s = ssim(target, rec, c1, c2);
    Grid out(target.height(), target.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = alpha * (1 - s[i]) / 2 + (1 - alpha) * std::abs(target[i] - rec[i]);
    }
    return out;
}

Grid photometric_dissimilarity_backward(const Image& target, const Image& rec, double alpha,
                                        const Grid& upstream, double c1, double c2) {
    require_same_shape(target, upstream, "dissimilarity backward: upstream size");
    Grid ssim_up(upstream.height(), upstream.width());
    for (std::size_t i = 0; i < upstream.size(); ++i) ssim_up[i] = -0.5 * alpha * upstream[i];
    Grid out = ssim_backward(target, rec, ssim_up, c1, c2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double diff = rec[i] - target[i];
        const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        out[i] += (1 - alpha) * sign * upstream[i];
    }
    return out;
}

// ---------------------------------------------------------- reprojection

ReprojectionResult reprojection_loss(const Image& target, std::span<const Image> sources,
                                     std::span<const Image> warped, std::span<const Mask> valid,
                                     const LossWeights& w, const Mask* fixed_mask) {
    if (sources.empty() || warped.empty()) throw Error(ErrorKind::NoSources, "reprojection loss");
    if (fixed_mask && (fixed_mask->height() != target.height() || fixed_mask->width() != target.width())) {
        throw Error(ErrorKind::DimensionMismatch, "fixed mask size");
    }
    if (!valid.empty() && valid.size() != warped.size()) {
        throw Error(ErrorKind::DimensionMismatch, "one validity mask per warped image required");
    }
    for (const auto& s : sources) require_same_shape(target, s, "reprojection: source size");
    for (const auto& s : warped) require_same_shape(target, s, "reprojection: warped size");

    const std::size_t n = target.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    ReprojectionResult res;
    res.mask = Mask(target.height(), target.width(), false);
    res.min_error = Grid(target.height(), target.width(), 0.0);
    res.selected.assign(n, -1);

    std::vector<double> min_identity(n, inf);
    for (const auto& s : sources) {
        const Grid e = photometric_dissimilarity(target, s, w.ssim_alpha, w.c1, w.c2);
        for (std::size_t i = 0; i < n; ++i) min_identity[i] = std::min(min_identity[i], e[i]);
    }
    std::vector<double> min_warped(n, inf);
    for (std::size_t k = 0; k < warped.size(); ++k) {
        res.warped_errors.push_back(photometric_dissimilarity(target, warped[k], w.ssim_alpha, w.c1, w.c2));
        const Grid& e = res.warped_errors.back();
        for (std::size_t i = 0; i < n; ++i) {
            if (!valid.empty() && !valid[k][i]) continue;
            if (e[i] < min_warped[i]) {  // strict: ties keep the lower index
                min_warped[i] = e[i];
                res.selected[i] = static_cast<int>(k);
            }
        }
    }
    long double sum = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (res.selected[i] < 0) continue;
        res.min_error[i] = min_warped[i];
        if (fixed_mask ? (*fixed_mask)[i] : min_warped[i] < min_identity[i]) {
            res.mask.set(i, true);
            sum += min_warped[i];
            ++count;
        }
    }
    res.loss = count ? static_cast<double>(sum / count) : 0.0;
    return res;
}

std::vector<Grid> reprojection_loss_backward(const Image& target, std::span<const Image> warped,
                                             const ReprojectionResult& fwd, const LossWeights& w) {
    const std::size_t count = fwd.mask.count();
    std::vector<Grid> grads;
    grads.reserve(warped.size());
    for (std::size_t k = 0; k < warped.size(); ++k) {
        Grid up(target.height(), target.width());
        bool any = false;
        if (count) {
            const double scale = 1.0 / static_cast<double>(count);
            for (std::size_t i = 0; i < up.size(); ++i) {
                if (fwd.mask[i] && fwd.selected[i] == static_cast<int>(k)) {
                    up[i] = scale;
                    any = true;
                }
            }
        }
        if (!any) {
            grads.emplace_back(target.height(), target.width());
            continue;
        }
        grads.push_back(photometric_dissimilarity_backward(target, warped[k], w.ssim_alpha, up, w.c1, w.c2));
    }
    return grads;
}

// ----------------------------------------------------------- smoothness

namespace {

double mean_disparity(const DisparityMap& d) {
    const double m = d.mean();
    if (!(m != 0.0) || !std::isfinite(m)) throw Error(ErrorKind::ZeroMeanDisparity, "smoothness loss");
    return m;
}

}  // namespace

double smoothness_loss(const DisparityMap& disp, const Image& img) {
    require_same_shape(disp, img, "smoothness: disparity and image differ in size");
    const int h = disp.height();
    const int w = disp.width();
    const double m = mean_disparity(disp);
    long double sx = 0, sy = 0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c + 1 < w; ++c) {
            sx += std::abs(disp(r, c + 1) - disp(r, c)) / m * std::exp(-std::abs(img(r, c + 1) - img(r, c)));
        }
    }
    for (int r = 0; r + 1 < h; ++r) {
        for (int c = 0; c < w; ++c) {
            sy += std::abs(disp(r + 1, c) - disp(r, c)) / m * std::exp(-std::abs(img(r + 1, c) - img(r, c)));
        }
    }
    const double nx = static_cast<double>(h) * (w - 1);
    const double ny = static_cast<double>(h - 1) * w;
    return static_cast<double>((nx > 0 ? sx / nx : 0.0L) + (ny > 0 ? sy / ny : 0.0L));
}

Grid smoothness_loss_backward(const DisparityMap& disp, const Image& img) {
    require_same_shape(disp, img, "smoothness: disparity and image differ in size");
    const int h = disp.height();
    const int w = disp.width();
    const double m = mean_disparity(disp);
    const double nx = static_cast<double>(h) * (w - 1);
    const double ny = static_cast<double>(h - 1) * w;
    auto sgn = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
    // Gradient w.r.t. the normalized disparity S* = S / m.
    Grid g(h, w);
    if (nx > 0) {
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c + 1 < w; ++c) {
                const double wgt = std::exp(-std::abs(img(r, c + 1) - img(r, c))) / nx;
                const double s = sgn(disp(r, c + 1) - disp(r, c)) * wgt;
                g(r, c + 1) += s;
                g(r, c) -= s;
            }
        }
    }
    if (ny > 0) {
        for (int r = 0; r + 1 < h; ++r) {
            for (int c = 0; c < w; ++c) {
                const double wgt = std::exp(-std::abs(img(r + 1, c) - img(r, c))) / ny;
                const double s = sgn(disp(r + 1, c) - disp(r, c)) * wgt;
                g(r + 1, c) += s;
                g(r, c) -= s;
            }
        }
    }
    double dot = 0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * disp[i];
    const double n = static_cast<double>(g.size());
    Grid out(h, w);
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] / m - dot / (m * m * n);
    return out;
}

// -------------------------------------------------------------- velocity

double velocity_loss(std::span<const Vec3, 2> translations, const ImageTriplet& tri) {
    double l = 0;
    for (int s = 0; s < 2; ++s) {
        l += std::abs(translations[s].norm() - std::abs(tri.velocities[s]) * tri.dt(s));
    }
    return l;
}

std::array<Vec3, 2> velocity_loss_backward(std::span<const Vec3, 2> translations, const ImageTriplet& tri) {
    std::array<Vec3, 2> g{Vec3::Zero(), Vec3::Zero()};
    for (int s = 0; s < 2; ++s) {
        const double n = translations[s].norm();
        if (n == 0.0) continue;
        const double diff = n - std::abs(tri.velocities[s]) * tri.dt(s);
        const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        g[s] = sign * translations[s] / n;
    }
    return g;
}

}  // namespace clslam
