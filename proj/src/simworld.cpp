#include "clslam/simworld.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>

#include "clslam/rng.hpp"

namespace clslam {

namespace fs = std::filesystem;

void EnvironmentSpec::validate() const {
    if (!(gain > 0)) throw Error(ErrorKind::InvalidArgument, env_id + ": gain must be positive");
    if (!(contrast > 0 && contrast <= 1)) throw Error(ErrorKind::InvalidArgument, env_id + ": contrast outside (0,1]");
    if (!(noise_sigma >= 0) || !(velocity_noise >= 0)) throw Error(ErrorKind::InvalidArgument, env_id + ": negative noise");
    if (!(velocity_min > 0 && velocity_max >= velocity_min)) {
        throw Error(ErrorKind::InvalidArgument, env_id + ": bad velocity bounds");
    }
    if (texture_octaves < 1 || !(texture_frequency > 0)) throw Error(ErrorKind::InvalidArgument, env_id + ": bad texture");
    if (box_density < 0 || !(box_size_min > 0 && box_size_max >= box_size_min) ||
        !(box_height_min > 0 && box_height_max >= box_height_min)) {
        throw Error(ErrorKind::InvalidArgument, env_id + ": bad box palette");
    }
}

void SceneSpec::validate() const {
    if (!(length > 0)) throw Error(ErrorKind::DegenerateTrajectory, scene_id + ": zero length");
    if (!(frame_rate > 0)) throw Error(ErrorKind::InvalidArgument, scene_id + ": frame rate must be positive");
    if (max_curvature < 0) throw Error(ErrorKind::InvalidArgument, scene_id + ": negative curvature bound");
}

void RenderedScene::validate() const {
    const std::size_t n = images.size();
    if (timestamps.size() != n || velocities.size() != n) {
        throw Error(ErrorKind::InconsistentLengths, scene_id + ": images/times/velocities differ in length");
    }
    if (!depths.empty() && depths.size() != n) throw Error(ErrorKind::InconsistentLengths, scene_id + ": depth count");
    if (!ground_truth.empty() && ground_truth.size() != n) {
        throw Error(ErrorKind::InconsistentLengths, scene_id + ": pose count");
    }
    for (std::size_t i = 1; i < n; ++i) {
        if (!(timestamps[i] > timestamps[i - 1])) throw Error(ErrorKind::InvalidArgument, scene_id + ": timestamps");
    }
    for (const auto& img : images) {
        if (!img || img->width() != intrinsics.width || img->height() != intrinsics.height) {
            throw Error(ErrorKind::DimensionMismatch, scene_id + ": image size");
        }
    }
}

namespace {

// ------------------------------------------------------------ trajectory

struct PathPoint {
    double x = 0, z = 0, heading = 0;
};

Pose3 camera_pose(const PathPoint& p) {
    const Mat3 r = Eigen::AngleAxisd(p.heading, Vec3::UnitY()).toRotationMatrix();
    return Pose3(r, Vec3(p.x, 0, p.z));
}

/// Open path with smoothly varying curvature, tabulated on a fine grid.
class WigglyPath {
public:
    WigglyPath(double length, double max_curvature, Rng& rng) : step_(0.05) {
        for (auto& w : waves_) {
            w.wavelength = rng.uniform(25.0, 70.0);
            w.phase = rng.uniform(0.0, 2 * std::numbers::pi);
            w.amp = rng.uniform(0.3, 1.0);
        }
        double total = 0;
        for (const auto& w : waves_) total += w.amp;
        for (auto& w : waves_) w.amp *= max_curvature / total;
        const std::size_t n = static_cast<std::size_t>(std::ceil(length / step_)) + 2;
        table_.resize(n);
        for (std::size_t i = 1; i < n; ++i) {
            const double mid = heading((i - 0.5) * step_);
            table_[i].x = table_[i - 1].x + step_ * std::sin(mid);
            table_[i].z = table_[i - 1].z + step_ * std::cos(mid);
        }
        for (std::size_t i = 0; i < n; ++i) table_[i].heading = heading(i * step_);
    }

    PathPoint at(double s) const {
        const double f = std::clamp(s / step_, 0.0, static_cast<double>(table_.size() - 1));
        const std::size_t i = std::min(static_cast<std::size_t>(f), table_.size() - 2);
        const double a = f - static_cast<double>(i);
        return {table_[i].x + a * (table_[i + 1].x - table_[i].x), table_[i].z + a * (table_[i + 1].z - table_[i].z),
                heading(s)};
    }

private:
    struct Wave { double wavelength, phase, amp; };

    double heading(double s) const {
        double h = 0;
        for (const auto& w : waves_) {
            const double k = 2 * std::numbers::pi / w.wavelength;
            h += w.amp / k * (std::cos(w.phase) - std::cos(k * s + w.phase));
        }
        return h;
    }

    double step_;
    std::array<Wave, 3> waves_{};
    std::vector<PathPoint> table_;
};

/// Closed rounded rectangle traversed clockwise seen from above, starting at
/// the origin facing +z.
class LoopPath {
public:
    explicit LoopPath(double length) : length_(length) {
        radius_ = std::clamp(length / 25.0, 4.0, 10.0);
        const double straight = length - 2 * std::numbers::pi * radius_;
        if (!(straight > 0)) throw Error(ErrorKind::DegenerateTrajectory, "loop too short for its corners");
        long_ = 0.3 * straight;
        short_ = 0.2 * straight;
    }

    PathPoint at(double s) const {
        s = std::fmod(s, length_);
        if (s < 0) s += length_;
        PathPoint p;
        const double arc = 0.5 * std::numbers::pi * radius_;
        for (int side = 0; side < 4; ++side) {
            const double straight = side % 2 == 0 ? long_ : short_;
            const double run = std::min(s, straight);
            p.x += run * std::sin(p.heading);
            p.z += run * std::cos(p.heading);
            s -= run;
            if (s <= 0) return p;
            const double u = std::min(s, arc);
            const double h1 = p.heading + u / radius_;
            p.x += radius_ * (std::cos(p.heading) - std::cos(h1));
            p.z += radius_ * (std::sin(h1) - std::sin(p.heading));
            p.heading = h1;
            s -= u;
            if (s <= 0) break;
        }
        return p;
    }

private:
    double length_;
    double radius_ = 0;
    double long_ = 0;
    double short_ = 0;
};

// ---------------------------------------------------------------- world

double lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iz) {
    const std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(ix) * 0x9E3779B97F4A7C15ULL ^
                                               static_cast<std::uint64_t>(iz) * 0xC2B2AE3D27D4EB4FULL));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(std::uint64_t seed, double x, double z) {
    const double fx = std::floor(x);
    const double fz = std::floor(z);
    const auto ix = static_cast<std::int64_t>(fx);
    const auto iz = static_cast<std::int64_t>(fz);
    double tx = x - fx;
    double tz = z - fz;
    tx = tx * tx * (3 - 2 * tx);
    tz = tz * tz * (3 - 2 * tz);
    const double a = lattice(seed, ix, iz);
    const double b = lattice(seed, ix + 1, iz);
    const double c = lattice(seed, ix, iz + 1);
    const double d = lattice(seed, ix + 1, iz + 1);
    return (a + tx * (b - a)) + tz * ((c + tx * (d - c)) - (a + tx * (b - a)));
}

/// Octave sum; octaves finer than the sample footprint fade to their mean.
double fbm(std::uint64_t seed, double freq, int octaves, double x, double z, double footprint) {
    double sum = 0, norm = 0, amp = 1;
    for (int o = 0; o < octaves; ++o) {
        const double keep = std::clamp((0.5 - freq * footprint) / 0.25, 0.0, 1.0);
        const double v = keep > 0 ? value_noise(mix64(seed + static_cast<std::uint64_t>(o)), x * freq, z * freq) : 0.5;
        sum += amp * (0.5 + keep * (v - 0.5));
        norm += amp;
        amp *= 0.5;
        freq *= 2;
    }
    return sum / norm;
}

struct Box {
    double cx, cz, yaw, hx, hz, height;
    std::uint64_t seed;
};

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    int kind = -1;  // -1 sky, 0 ground, 1 box
    Vec3 normal = Vec3::Zero();
    double tu = 0, tv = 0;
    std::uint64_t seed = 0;
};

class World {
public:
    World(const EnvironmentSpec& env, std::uint64_t seed, double cam_height)
        : env_(env), ground_seed_(derive_seed(env.texture_seed, "ground:" + std::to_string(seed))),
          cam_height_(cam_height) {}

    void add_box(const Box& b) { boxes_.push_back(b); }
    std::size_t box_count() const { return boxes_.size(); }

    /// Boxes whose footprint lies within `radius` of (x, z).
    std::vector<const Box*> nearby(double x, double z, double radius) const {
        std::vector<const Box*> out;
        for (const auto& b : boxes_) {
            const double r = radius + std::hypot(b.hx, b.hz);
            if ((b.cx - x) * (b.cx - x) + (b.cz - z) * (b.cz - z) < r * r) out.push_back(&b);
        }
        return out;
    }

    Hit trace(const Vec3& origin, const Vec3& dir, const std::vector<const Box*>& boxes) const {
        Hit hit;
        if (dir.y() > 1e-12) {
            const double t = (cam_height_ - origin.y()) / dir.y();
            if (t > 0) {
                hit.t = t;
                hit.kind = 0;
                hit.normal = Vec3(0, -1, 0);
                hit.tu = origin.x() + t * dir.x();
                hit.tv = origin.z() + t * dir.z();
                hit.seed = ground_seed_;
            }
        }
        for (const Box* b : boxes) intersect_box(*b, origin, dir, hit);
        return hit;
    }

    /// `footprint` is the angular size of one sample (radians).
    double shade(const Hit& h, const Vec3& dir, double footprint) const {
        if (h.kind < 0) {
            const double elev = -dir.y() / dir.norm();
            return std::clamp(env_.bias + env_.gain * (0.72 + 0.25 * elev), 0.0, 1.0);
        }
        static const Vec3 light = Vec3(0.4, -0.8, 0.3).normalized();
        const double lambert = 0.5 + 0.5 * std::max(0.0, h.normal.dot(light));
        const double freq = env_.texture_frequency * (h.kind == 1 ? 1.5 : 1.0);
        const double tex = fbm(h.seed, freq, env_.texture_octaves, h.tu, h.tv, h.t * dir.norm() * footprint);
        const double albedo = std::clamp(0.5 + 1.6 * env_.contrast * (tex - 0.5), 0.02, 1.0);
        return std::clamp(env_.bias + env_.gain * lambert * albedo, 0.0, 1.0);
    }

private:
    void intersect_box(const Box& b, const Vec3& o, const Vec3& d, Hit& hit) const {
        const double c = std::cos(b.yaw), s = std::sin(b.yaw);
        const double ox = o.x() - b.cx, oz = o.z() - b.cz;
        const Vec3 lo(c * ox - s * oz, o.y(), s * ox + c * oz);
        const Vec3 ld(c * d.x() - s * d.z(), d.y(), s * d.x() + c * d.z());
        const double lo_b[3] = {-b.hx, cam_height_ - b.height, -b.hz};
        const double hi_b[3] = {b.hx, cam_height_, b.hz};
        double tmin = -std::numeric_limits<double>::infinity();
        double tmax = std::numeric_limits<double>::infinity();
        int axis = -1;
        double sign = 0;
        for (int a = 0; a < 3; ++a) {
            if (std::abs(ld(a)) < 1e-15) {
                if (lo(a) < lo_b[a] || lo(a) > hi_b[a]) return;
                continue;
            }
            double t0 = (lo_b[a] - lo(a)) / ld(a);
            double t1 = (hi_b[a] - lo(a)) / ld(a);
            double sg = -1;
            if (t0 > t1) {
                std::swap(t0, t1);
                sg = 1;
            }
            if (t0 > tmin) {
                tmin = t0;
                axis = a;
                sign = sg;
            }
            tmax = std::min(tmax, t1);
        }
        if (axis < 0 || tmin > tmax || tmin <= 1e-9 || tmin >= hit.t) return;
        const Vec3 p = lo + tmin * ld;
        Vec3 nl = Vec3::Zero();
        nl(axis) = sign;
        hit.t = tmin;
        hit.kind = 1;
        // back to world: inverse of the local rotation
        hit.normal = Vec3(c * nl.x() + s * nl.z(), nl.y(), -s * nl.x() + c * nl.z());
        hit.seed = b.seed + static_cast<std::uint64_t>(axis);
        if (axis == 0) {
            hit.tu = p.z();
            hit.tv = p.y();
        } else if (axis == 2) {
            hit.tu = p.x();
            hit.tv = p.y();
        } else {
            hit.tu = p.x();
            hit.tv = p.z();
        }
    }

    const EnvironmentSpec& env_;
    std::uint64_t ground_seed_;
    double cam_height_;
    std::vector<Box> boxes_;
};

// Texture octaves fade out once their period drops below a few pixels;
// finer detail flickers between frames and breaks photometric consistency.
constexpr double kTextureLod = 3.0;

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

// -------------------------------------------------------------------- io

void sync_file(const fs::path& p) {
    const int fd = ::open(p.c_str(), O_RDONLY);
    if (fd < 0) throw Error(ErrorKind::IoError, "cannot reopen " + p.string());
    const int rc = ::fsync(fd);
    ::close(fd);
    if (rc != 0) throw Error(ErrorKind::IoError, "fsync failed for " + p.string());
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
    std::ofstream os(p, binary ? std::ios::binary : std::ios::out);
    if (!os) throw Error(ErrorKind::IoError, "cannot write " + p.string());
    if (!binary) os.precision(std::numeric_limits<double>::max_digits10);
    return os;
}

void finish(std::ofstream& os, const fs::path& p) {
    os.close();
    if (!os) throw Error(ErrorKind::IoError, "write failed for " + p.string());
    sync_file(p);
}

std::string frame_name(std::size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.%s", i, ext);
    return buf;
}

std::vector<double> read_numbers(const fs::path& p, bool one_per_line = true) {
    std::ifstream is(p);
    if (!is) throw Error(ErrorKind::MissingFile, p.string());
    std::vector<double> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        double v;
        std::string extra;
        if (one_per_line) {
            if (!(ls >> v) || (ls >> extra)) throw Error(ErrorKind::ParseError, p.string() + ": '" + line + "'");
            out.push_back(v);
            continue;
        }
        while (ls >> v) out.push_back(v);
        if (!ls.eof()) throw Error(ErrorKind::ParseError, p.string() + ": '" + line + "'");
    }
    return out;
}

void write_pgm(const fs::path& p, const Image& img) {
    auto os = open_out(p, true);
    os << "P5\n" << img.width() << " " << img.height() << "\n255\n";
    std::vector<unsigned char> bytes(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    finish(os, p);
}

Image read_pgm(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error(ErrorKind::MissingFile, p.string());
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    if (!(is >> magic >> w >> h >> maxv) || magic != "P5" || w <= 0 || h <= 0 || maxv != 255) {
        throw Error(ErrorKind::ParseError, p.string() + ": not an 8-bit binary PGM");
    }
    is.get();
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw Error(ErrorKind::ParseError, p.string() + ": truncated image data");
    }
    Image img(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = bytes[i] / 255.0;
    return img;
}

void write_depth(const fs::path& p, const DepthMap& d) {
    auto os = open_out(p, true);
    for (double v : d.values()) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                    static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
    }
    finish(os, p);
}

DepthMap read_depth(const fs::path& p, int h, int w) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error(ErrorKind::MissingFile, p.string());
    DepthMap d(h, w);
    for (std::size_t i = 0; i < d.size(); ++i) {
        unsigned char b[4];
        if (!is.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorKind::ParseError, p.string() + ": truncated");
        const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        d[i] = std::bit_cast<float>(bits);
    }
    if (is.peek() != std::char_traits<char>::eof()) throw Error(ErrorKind::ParseError, p.string() + ": trailing data");
    return d;
}

}  // namespace

// -------------------------------------------------------------- generate

RenderedScene generate_scene(const EnvironmentSpec& env, const SceneSpec& scene, const RenderSettings& settings) {
    env.validate();
    scene.validate();
    const CameraIntrinsics& k = settings.intrinsics;
    k.validate();

    Rng path_rng(derive_seed(scene.seed, "path"));
    std::function<PathPoint(double)> path;
    if (scene.revisit) {
        path = [p = LoopPath(scene.length)](double s) { return p.at(s); };
    } else {
        path = [p = WigglyPath(scene.length, scene.max_curvature, path_rng)](double s) { return p.at(s); };
    }

    // Speed profile v(t) = mid + amp sin(2 pi t / period + phase), integrated in closed form.
    const double v_mid = 0.5 * (env.velocity_min + env.velocity_max);
    const double v_amp = 0.5 * (env.velocity_max - env.velocity_min);
    const double period = path_rng.uniform(8.0, 20.0);
    const double phase = path_rng.uniform(0.0, 2 * std::numbers::pi);
    const double omega = 2 * std::numbers::pi / period;
    auto distance = [&](double t) { return v_mid * t + v_amp / omega * (std::cos(phase) - std::cos(omega * t + phase)); };

    RenderedScene out;
    out.env_id = env.env_id;
    out.scene_id = scene.scene_id;
    out.intrinsics = k;
    std::vector<PathPoint> points;
    for (std::size_t i = 0;; ++i) {
        const double t = static_cast<double>(i) / scene.frame_rate;
        const double s = distance(t);
        out.timestamps.push_back(t);
        points.push_back(path(std::min(s, scene.length)));
        if (s >= scene.length) break;
    }
    const std::size_t n = points.size();
    if (n < 3) throw Error(ErrorKind::DegenerateTrajectory, scene.scene_id + ": fewer than three frames");

    // Boxes beside the path, kept clear of the driving corridor.
    World world(env, scene.seed, settings.camera_height);
    Rng box_rng(derive_seed(scene.seed ^ env.texture_seed, "boxes"));
    std::vector<PathPoint> centerline;
    for (double s = 0; s <= scene.length; s += 1.0) centerline.push_back(path(s));
    const auto wanted = static_cast<std::size_t>(std::lround(env.box_density * scene.length));
    for (std::size_t tries = 0; world.box_count() < wanted && tries < 20 * wanted + 20; ++tries) {
        const PathPoint at = path(box_rng.uniform(0.0, scene.length));
        const double side = box_rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double offset = box_rng.uniform(5.0, 12.0);
        Box b;
        b.hx = 0.5 * box_rng.uniform(env.box_size_min, env.box_size_max);
        b.hz = 0.5 * box_rng.uniform(env.box_size_min, env.box_size_max);
        b.height = box_rng.uniform(env.box_height_min, env.box_height_max);
        b.yaw = at.heading + box_rng.uniform(-0.3, 0.3);
        b.cx = at.x + side * offset * std::cos(at.heading);
        b.cz = at.z - side * offset * std::sin(at.heading);
        b.seed = box_rng.next();
        const double clearance = std::hypot(b.hx, b.hz) + 2.0;
        bool clear = true;
        for (const auto& c : centerline) {
            if (std::hypot(c.x - b.cx, c.z - b.cz) < clearance) {
                clear = false;
                break;
            }
        }
        if (clear) world.add_box(b);
    }

    const int h = k.height, w = k.width, ss = std::max(1, settings.supersample);
    const std::uint64_t noise_seed = derive_seed(scene.seed ^ env.texture_seed, "noise");
    out.images.reserve(n);
    out.depths.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Pose3 pose = camera_pose(points[i]);
        const Mat3 r = pose.rotation();
        const Vec3 origin = pose.translation();
        const auto boxes = world.nearby(origin.x(), origin.z(), 80.0);
        auto img = std::make_shared<Image>(h, w);
        DepthMap depth(h, w);
        Rng noise(mix64(noise_seed + i));
        for (int row = 0; row < h; ++row) {
            for (int col = 0; col < w; ++col) {
                const Vec3 center_dir = r * Vec3((col - k.cx) / k.fx, (row - k.cy) / k.fy, 1.0);
                const Hit ch = world.trace(origin, center_dir, boxes);
                depth(row, col) = static_cast<float>(ch.kind < 0 ? settings.sky_depth : ch.t);
                double acc = 0;
                for (int a = 0; a < ss; ++a) {
                    for (int b = 0; b < ss; ++b) {
                        const double u = col - 0.5 + (b + 0.5) / ss;
                        const double v = row - 0.5 + (a + 0.5) / ss;
                        const Vec3 dir = r * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
                        acc += world.shade(world.trace(origin, dir, boxes), dir, kTextureLod / k.fx);
                    }
                }
                const double sigma = env.noise_sigma;
                (*img)(row, col) = quantize(acc / (ss * ss) + (sigma > 0 ? sigma * noise.normal() : 0.0));
            }
        }
        out.images.push_back(std::move(img));
        out.depths.push_back(std::move(depth));
        out.ground_truth.push_back(out.timestamps[i], pose);
    }

    Rng vel_rng(derive_seed(scene.seed ^ env.texture_seed, "velocity"));
    out.velocities.assign(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
        const double dist = (out.ground_truth[i].pose.translation() - out.ground_truth[i - 1].pose.translation()).norm();
        const double exact = dist / (out.timestamps[i] - out.timestamps[i - 1]);
        const double factor = env.velocity_noise > 0 ? 1.0 + env.velocity_noise * vel_rng.normal() : 1.0;
        out.velocities[i] = std::max(0.0, exact * factor);
    }
    out.velocities[0] = out.velocities[1];
    out.validate();
    return out;
}

// -------------------------------------------------------------------- io

void write_dataset(const RenderedScene& scene, const fs::path& dir) {
    scene.validate();
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + (dir / "images").string());
    if (scene.has_depth()) {
        fs::create_directories(dir / "depth", ec);
        if (ec) throw Error(ErrorKind::IoError, "cannot create " + (dir / "depth").string());
    }

    {
        const auto p = dir / "calib.txt";
        auto os = open_out(p);
        const auto& k = scene.intrinsics;
        os << k.fx << " " << k.fy << " " << k.cx << " " << k.cy << " " << k.width << " " << k.height << "\n";
        finish(os, p);
    }
    {
        const auto p = dir / "scene.txt";
        auto os = open_out(p);
        os << "env_id " << scene.env_id << "\nscene_id " << scene.scene_id << "\n";
        finish(os, p);
    }
    for (const auto& [name, values] : {std::pair{"times.txt", &scene.timestamps}, std::pair{"velocities.txt", &scene.velocities}}) {
        const auto p = dir / name;
        auto os = open_out(p);
        for (double v : *values) os << v << "\n";
        finish(os, p);
    }
    for (std::size_t i = 0; i < scene.size(); ++i) {
        write_pgm(dir / "images" / frame_name(i, "pgm"), *scene.images[i]);
        if (scene.has_depth()) write_depth(dir / "depth" / frame_name(i, "bin"), scene.depths[i]);
    }
    if (scene.has_ground_truth()) {
        const auto p = dir / "poses_gt.txt";
        auto os = open_out(p);
        write_pose_rows(os, scene.ground_truth.pose_list());
        finish(os, p);
    }
}

RenderedScene read_dataset(const fs::path& dir) {
    RenderedScene s;
    const auto calib = read_numbers(dir / "calib.txt", false);
    if (calib.size() != 6) throw Error(ErrorKind::ParseError, (dir / "calib.txt").string() + ": expected 6 numbers");
    s.intrinsics = {calib[0], calib[1], calib[2], calib[3], static_cast<int>(calib[4]), static_cast<int>(calib[5])};
    s.intrinsics.validate();

    s.env_id = dir.parent_path().filename().string();
    s.scene_id = dir.filename().string();
    if (std::ifstream meta(dir / "scene.txt"); meta) {
        std::string key, value;
        while (meta >> key >> value) {
            if (key == "env_id") s.env_id = value;
            if (key == "scene_id") s.scene_id = value;
        }
    }

    s.timestamps = read_numbers(dir / "times.txt");
    s.velocities = read_numbers(dir / "velocities.txt");
    if (!fs::is_directory(dir / "images")) throw Error(ErrorKind::MissingFile, (dir / "images").string());
    for (std::size_t i = 0;; ++i) {
        const auto p = dir / "images" / frame_name(i, "pgm");
        if (!fs::exists(p)) break;
        s.images.push_back(std::make_shared<Image>(read_pgm(p)));
    }
    if (s.velocities.size() != s.timestamps.size() || s.images.size() != s.timestamps.size()) {
        throw Error(ErrorKind::InconsistentLengths,
                    dir.string() + ": " + std::to_string(s.images.size()) + " images, " +
                        std::to_string(s.timestamps.size()) + " times, " + std::to_string(s.velocities.size()) +
                        " velocities");
    }
    if (fs::is_directory(dir / "depth")) {
        for (std::size_t i = 0; i < s.images.size(); ++i) {
            const auto p = dir / "depth" / frame_name(i, "bin");
            if (!fs::exists(p)) throw Error(ErrorKind::InconsistentLengths, dir.string() + ": depth maps missing");
            s.depths.push_back(read_depth(p, s.intrinsics.height, s.intrinsics.width));
        }
    }
    if (fs::exists(dir / "poses_gt.txt")) {
        std::ifstream is(dir / "poses_gt.txt");
        const auto poses = read_pose_rows(is);
        if (poses.size() != s.images.size()) throw Error(ErrorKind::InconsistentLengths, dir.string() + ": pose count");
        for (std::size_t i = 0; i < poses.size(); ++i) s.ground_truth.push_back(s.timestamps[i], poses[i]);
    }
    s.validate();
    return s;
}

double mean_velocity(const RenderedScene& scene, std::size_t a, std::size_t b) {
    if (!(a < b && b < scene.size())) throw Error(ErrorKind::InvalidArgument, "mean_velocity: bad frame range");
    double dist = 0;
    for (std::size_t i = a + 1; i <= b; ++i) dist += scene.velocities[i] * (scene.timestamps[i] - scene.timestamps[i - 1]);
    return dist / (scene.timestamps[b] - scene.timestamps[a]);
}

ImageTriplet make_triplet(const RenderedScene& scene, std::size_t a, std::size_t b, std::size_t c) {
    ImageTriplet t;
    t.frames = {scene.images[a], scene.images[b], scene.images[c]};
    t.timestamps = {scene.timestamps[a], scene.timestamps[b], scene.timestamps[c]};
    t.velocities = {mean_velocity(scene, a, b), mean_velocity(scene, b, c)};
    t.env_id = scene.env_id;
    t.scene_id = scene.scene_id;
    t.frame_index = static_cast<int>(c);
    return t;
}

std::vector<ImageTriplet> scene_triplets(const RenderedScene& scene) {
    std::vector<ImageTriplet> out;
    for (std::size_t i = 2; i < scene.size(); ++i) out.push_back(make_triplet(scene, i - 2, i - 1, i));
    return out;
}

}  // namespace clslam
