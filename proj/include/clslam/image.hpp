#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "clslam/error.hpp"

namespace clslam {

/// Row-major dense 2D array of doubles.
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, double fill = 0.0)
        : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
        if (height < 0 || width < 0) throw Error(ErrorKind::InvalidArgument, "negative grid size");
    }

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * width_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * width_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    bool same_shape(const Grid& o) const { return height_ == o.height_ && width_ == o.width_; }
    double mean() const;

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

/// Single-channel intensity image with values in [0, 1].
struct Image : Grid {
    using Grid::Grid;
    explicit Image(Grid g) : Grid(std::move(g)) {}
    bool in_range() const;
};

/// Inverse depth (1/m).
struct DisparityMap : Grid {
    using Grid::Grid;
    explicit DisparityMap(Grid g) : Grid(std::move(g)) {}
};

/// Metric depth (m).
struct DepthMap : Grid {
    using Grid::Grid;
    explicit DepthMap(Grid g) : Grid(std::move(g)) {}
};

/// Boolean per-pixel mask stored as bytes.
class Mask {
public:
    Mask() = default;
    Mask(int height, int width, bool fill)
        : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    bool operator[](std::size_t i) const { return data_[i] != 0; }
    void set(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }
    bool operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * width_ + c] != 0; }
    std::size_t count() const;
    bool all() const { return count() == data_.size(); }
    bool none() const { return count() == 0; }

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<unsigned char> data_;
};

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
    if (!a.same_shape(b)) throw Error(ErrorKind::DimensionMismatch, what);
}

}  // namespace clslam
