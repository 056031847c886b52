#include "clslam/backend.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include "clslam/error.hpp"

namespace clslam {

// -------------------------------------------------------------- descriptor

namespace {

constexpr int kGrid = 8;
constexpr int kBins = 8;

void normalize(std::span<double> v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0) {
        for (double& x : v) x /= n;
    }
}

}  // namespace

Descriptor describe(const Image& image) {
    const int h = image.height(), w = image.width();
    if (h < kGrid || w < kGrid) throw Error(ErrorKind::DimensionMismatch, "image smaller than the descriptor grid");
    Descriptor d(kGrid * kGrid + kBins, 0.0);

    for (int by = 0; by < kGrid; ++by) {
        for (int bx = 0; bx < kGrid; ++bx) {
            const int r0 = by * h / kGrid, r1 = (by + 1) * h / kGrid;
            const int c0 = bx * w / kGrid, c1 = (bx + 1) * w / kGrid;
            double s = 0;
            for (int r = r0; r < r1; ++r)
                for (int c = c0; c < c1; ++c) s += image(r, c);
            d[by * kGrid + bx] = s / ((r1 - r0) * (c1 - c0));
        }
    }
    const double mean = std::accumulate(d.begin(), d.begin() + kGrid * kGrid, 0.0) / (kGrid * kGrid);
    for (int i = 0; i < kGrid * kGrid; ++i) d[i] -= mean;

    for (int r = 1; r + 1 < h; ++r) {
        for (int c = 1; c + 1 < w; ++c) {
            const double gx = 0.5 * (image(r, c + 1) - image(r, c - 1));
            const double gy = 0.5 * (image(r + 1, c) - image(r - 1, c));
            const double mag = std::hypot(gx, gy);
            if (mag == 0) continue;
            const double a = std::atan2(gy, gx) + std::numbers::pi;  // [0, 2pi]
            const int bin = std::min(kBins - 1, static_cast<int>(a / (2 * std::numbers::pi) * kBins));
            d[kGrid * kGrid + bin] += mag;
        }
    }

    std::span<double> all(d);
    normalize(all.first(kGrid * kGrid));
    normalize(all.last(kBins));
    normalize(all);
    return d;
}

double cosine_similarity(const Descriptor& a, const Descriptor& b) {
    if (a.size() != b.size()) throw Error(ErrorKind::LengthMismatch, "descriptor lengths differ");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

void DescriptorMemory::add(std::size_t frame, Descriptor d) {
    if (!entries_.empty() && frame <= entries_.back().frame)
        throw Error(ErrorKind::InvalidArgument, "descriptor memory frames must increase");
    entries_.push_back({frame, std::move(d)});
}

std::vector<LoopCandidate> detect_loops(std::size_t index, const Descriptor& current, const DescriptorMemory& memory,
                                        double threshold, std::size_t min_gap) {
    std::vector<LoopCandidate> out;
    for (const auto& e : memory.entries()) {
        if (e.frame >= index || index - e.frame <= min_gap) continue;
        const double s = cosine_similarity(current, e.descriptor);
        if (s > threshold) out.push_back({e.frame, s});
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.similarity > b.similarity; });
    return out;
}

// -------------------------------------------------------------- pose graph

std::size_t PoseGraph::add_node(const Pose3& pose) {
    nodes_.push_back(pose);
    return nodes_.size() - 1;
}

void PoseGraph::add_edge(const GraphEdge& e) {
    if (e.i >= nodes_.size() || e.j >= nodes_.size() || e.i == e.j)
        throw Error(ErrorKind::InvalidArgument, "edge endpoints " + std::to_string(e.i) + "-" + std::to_string(e.j));
    if (!e.information.isApprox(e.information.transpose(), 1e-12) || e.information.llt().info() != Eigen::Success)
        throw Error(ErrorKind::InvalidArgument, "information matrix is not SPD");
    edges_.push_back(e);
}

void PoseGraph::add_odometry(std::size_t i, std::size_t j, const Pose3& z, double weight) {
    add_edge({EdgeKind::odometry, i, j, z, weight * Mat6::Identity()});
}

void PoseGraph::add_loop(std::size_t i, std::size_t j, const Pose3& z, double weight) {
    add_edge({EdgeKind::loop, i, j, z, weight * Mat6::Identity()});
}

namespace {

Vec6 edge_residual(const GraphEdge& e, const Pose3& ti, const Pose3& tj) {
    return se3_log(e.measurement.inverse() * (ti.inverse() * tj)).as_vector();
}

double total_chi2(const std::vector<GraphEdge>& edges, const std::vector<Pose3>& nodes) {
    long double s = 0;
    for (const auto& e : edges) {
        const Vec6 r = edge_residual(e, nodes[e.i], nodes[e.j]);
        s += r.dot(e.information * r);
    }
    return static_cast<double>(s);
}

Pose3 perturb(const Pose3& p, const Vec6& delta) { return p * se3_exp(Twist::from_vector(delta)); }

}  // namespace

Vec6 PoseGraph::residual(const GraphEdge& e) const { return edge_residual(e, nodes_[e.i], nodes_[e.j]); }

double PoseGraph::chi2() const { return total_chi2(edges_, nodes_); }

bool PoseGraph::connected() const {
    if (nodes_.empty()) return true;
    std::vector<std::size_t> parent(nodes_.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& e : edges_) parent[find(e.i)] = find(e.j);
    const std::size_t root = find(0);
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
        if (find(i) != root) return false;
    }
    return true;
}

OptimizeReport optimize_graph(PoseGraph& graph, int max_iterations, double tolerance) {
    if (!graph.connected()) throw Error(ErrorKind::NotConnected, "pose graph is not connected");
    OptimizeReport rep;
    rep.chi2_before = graph.chi2();
    rep.chi2_after = rep.chi2_before;
    rep.chi2_history.push_back(rep.chi2_before);
    const std::size_t n = graph.size();
    if (n < 2 || graph.edges().empty()) {
        rep.converged = true;
        return rep;
    }

    const int dim = static_cast<int>(6 * (n - 1));
    constexpr double kStep = 1e-6;
    constexpr double kLambdaCap = 1e8;
    double lambda = 1e-4;
    std::vector<Pose3> nodes = graph.nodes();
    double chi2 = rep.chi2_before;

    while (rep.iterations < max_iterations) {
        ++rep.iterations;
        if (chi2 < tolerance) {
            rep.converged = true;
            break;
        }
        std::vector<Eigen::Triplet<double>> trip;
        Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
        for (const auto& e : graph.edges()) {
            const Vec6 r = edge_residual(e, nodes[e.i], nodes[e.j]);
            Eigen::Matrix<double, 6, 12> jac;
            for (int k = 0; k < 12; ++k) {
                Vec6 d = Vec6::Zero();
                d[k % 6] = kStep;
                const bool on_i = k < 6;
                const Pose3& pi = nodes[e.i];
                const Pose3& pj = nodes[e.j];
                const Vec6 plus = on_i ? edge_residual(e, perturb(pi, d), pj) : edge_residual(e, pi, perturb(pj, d));
                const Vec6 minus = on_i ? edge_residual(e, perturb(pi, -d), pj) : edge_residual(e, pi, perturb(pj, -d));
                jac.col(k) = (plus - minus) / (2 * kStep);
            }
            const std::array<std::size_t, 2> ids{e.i, e.j};
            for (int a = 0; a < 2; ++a) {
                if (ids[a] == 0) continue;
                const int ra = static_cast<int>(6 * (ids[a] - 1));
                const auto ja = jac.middleCols<6>(6 * a);
                b.segment<6>(ra) -= ja.transpose() * e.information * r;
                for (int c = 0; c < 2; ++c) {
                    if (ids[c] == 0) continue;
                    const int rc = static_cast<int>(6 * (ids[c] - 1));
                    const Mat6 blk = ja.transpose() * e.information * jac.middleCols<6>(6 * c);
                    for (int u = 0; u < 6; ++u)
                        for (int v = 0; v < 6; ++v) trip.emplace_back(ra + u, rc + v, blk(u, v));
                }
            }
        }
        Eigen::SparseMatrix<double> h(dim, dim);
        h.setFromTriplets(trip.begin(), trip.end());

        bool accepted = false;
        while (!accepted) {
            Eigen::SparseMatrix<double> damped = h;
            for (int k = 0; k < dim; ++k) damped.coeffRef(k, k) += lambda;
            Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(damped);
            Eigen::VectorXd dx;
            if (solver.info() == Eigen::Success) dx = solver.solve(b);
            if (solver.info() == Eigen::Success && dx.allFinite()) {
                std::vector<Pose3> trial = nodes;
                for (std::size_t i = 1; i < n; ++i) trial[i] = perturb(nodes[i], dx.segment<6>(6 * (i - 1)));
                const double c = total_chi2(graph.edges(), trial);
                if (c <= chi2) {
                    const double gain = chi2 - c;
                    nodes = std::move(trial);
                    chi2 = c;
                    rep.chi2_history.push_back(c);
                    lambda = std::max(lambda / 10, 1e-12);
                    accepted = true;
                    if (gain < tolerance) rep.converged = true;
                    break;
                }
                if (c - chi2 < tolerance && dx.norm() < 1e-12) {
                    rep.converged = true;
                    break;
                }
            }
            lambda *= 10;
            if (lambda > kLambdaCap) {
                // No descent direction left at this linearization: a minimum up to round-off.
                if (b.norm() < 1e-6 * (1 + chi2)) {
                    rep.converged = true;
                    break;
                }
                throw Error(ErrorKind::SolverDiverged, "damping exceeded " + std::to_string(kLambdaCap));
            }
        }
        if (rep.converged) break;
    }
    for (std::size_t i = 1; i < n; ++i) graph.set_node(i, nodes[i]);
    rep.chi2_after = chi2;
    return rep;
}

void write_graph(std::ostream& os, const PoseGraph& g) {
    const auto old = os.precision(17);
    auto row = [&](const Pose3& p) {
        for (double v : p.to_row()) os << " " << v;
    };
    for (std::size_t i = 0; i < g.size(); ++i) {
        os << "NODE " << i;
        row(g.nodes()[i]);
        os << "\n";
    }
    for (const auto& e : g.edges()) {
        os << "EDGE " << (e.kind == EdgeKind::loop ? "loop" : "odometry") << " " << e.i << " " << e.j;
        row(e.measurement);
        for (int r = 0; r < 6; ++r)
            for (int c = r; c < 6; ++c) os << " " << e.information(r, c);
        os << "\n";
    }
    os.precision(old);
}

std::vector<Vec3> export_pointcloud(const Trajectory& trajectory, const std::vector<DepthMap>& depths,
                                    const CameraIntrinsics& k, int stride) {
    if (trajectory.size() != depths.size())
        throw Error(ErrorKind::FrameMismatch, std::to_string(trajectory.size()) + " poses vs " +
                                                  std::to_string(depths.size()) + " depth maps");
    if (stride < 1) throw Error(ErrorKind::InvalidArgument, "stride must be >= 1");
    std::vector<Vec3> out;
    for (std::size_t f = 0; f < depths.size(); ++f) {
        const DepthMap& d = depths[f];
        if (d.height() != k.height || d.width() != k.width)
            throw Error(ErrorKind::FrameMismatch, "depth map " + std::to_string(f) + " does not match intrinsics");
        const Pose3& t = trajectory[f].pose;
        for (int r = 0; r < d.height(); r += stride)
            for (int c = 0; c < d.width(); c += stride)
                out.push_back(t.transform(unproject_pixel(Vec2(c, r), d(r, c), k)));
    }
    return out;
}

void write_pointcloud(std::ostream& os, const std::vector<Vec3>& points) {
    const auto old = os.precision(9);
    for (const auto& p : points) os << p.x() << " " << p.y() << " " << p.z() << "\n";
    os.precision(old);
}

}  // namespace clslam
