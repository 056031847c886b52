#pragma once

#include <iosfwd>
#include <vector>

#include "clslam/geometry.hpp"
#include "clslam/image.hpp"

namespace clslam {

using Mat6 = Eigen::Matrix<double, 6, 6>;

/// 8x8 block means (zero mean) and an 8-bin gradient-orientation histogram,
/// each block normalized, weighted 1/sqrt(2), 72 values, unit norm.
using Descriptor = std::vector<double>;

Descriptor describe(const Image& image);
/// Throws LengthMismatch.
double cosine_similarity(const Descriptor& a, const Descriptor& b);

class DescriptorMemory {
public:
    struct Entry {
        std::size_t frame;
        Descriptor descriptor;
    };
    /// Throws InvalidArgument unless frame indices strictly increase.
    void add(std::size_t frame, Descriptor d);
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<Entry> entries_;
};

struct LoopCandidate {
    std::size_t frame = 0;
    double similarity = 0;
};

/// Memory frames j with index - j > min_gap and similarity > threshold,
/// most similar first.
std::vector<LoopCandidate> detect_loops(std::size_t index, const Descriptor& current, const DescriptorMemory& memory,
                                        double threshold, std::size_t min_gap);

enum class EdgeKind { odometry, loop };

struct GraphEdge {
    EdgeKind kind = EdgeKind::odometry;
    std::size_t i = 0, j = 0;
    Pose3 measurement;  // pose of node j in the frame of node i
    Mat6 information = Mat6::Identity();
};

class PoseGraph {
public:
    std::size_t add_node(const Pose3& pose);
    /// Throws InvalidArgument for unknown endpoints or a non-SPD information matrix.
    void add_edge(const GraphEdge& e);
    void add_odometry(std::size_t i, std::size_t j, const Pose3& z, double weight = 1.0);
    void add_loop(std::size_t i, std::size_t j, const Pose3& z, double weight = 10.0);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<Pose3>& nodes() const { return nodes_; }
    const std::vector<GraphEdge>& edges() const { return edges_; }
    void set_node(std::size_t i, const Pose3& p) { nodes_.at(i) = p; }

    Vec6 residual(const GraphEdge& e) const;
    double chi2() const;
    bool connected() const;

private:
    std::vector<Pose3> nodes_;
    std::vector<GraphEdge> edges_;
};

struct OptimizeReport {
    double chi2_before = 0;
    double chi2_after = 0;
    std::vector<double> chi2_history;  // after each accepted iteration, starting with chi2_before
    int iterations = 0;
    bool converged = false;
};

/// Levenberg-Marquardt over right-multiplied se(3) increments of nodes 1..n-1;
/// node 0 is held fixed. Throws NotConnected, SolverDiverged.
OptimizeReport optimize_graph(PoseGraph& graph, int max_iterations = 50, double tolerance = 1e-10);

/// `NODE i <12>` and `EDGE kind i j <12> <21 upper-triangular information>` lines.
void write_graph(std::ostream& os, const PoseGraph& g);

/// World points from every stride-th pixel of each depth map. Throws FrameMismatch.
std::vector<Vec3> export_pointcloud(const Trajectory& trajectory, const std::vector<DepthMap>& depths,
                                    const CameraIntrinsics& k, int stride);
void write_pointcloud(std::ostream& os, const std::vector<Vec3>& points);

}  // namespace clslam
