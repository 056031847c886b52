#pragma once

#include <cmath>
#include <memory>

#include "clslam/image.hpp"
#include "clslam/photometric.hpp"
#include "clslam/rng.hpp"

namespace clslam::testing {

// Sum of a few random sinusoids squashed into (0, 1).
inline Image smooth_random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    struct Wave { double fx, fy, ph, amp; };
    Wave waves[5];
    for (auto& wv : waves) wv = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0, 6.28), rng.uniform(0.3, 1.0)};
    Image img(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double s = 0;
            for (const auto& wv : waves) s += wv.amp * std::sin(wv.fx * c + wv.fy * r + wv.ph);
            img(r, c) = 1.0 / (1.0 + std::exp(-s));
        }
    return img;
}

// Shifted crops of one wide texture, so consecutive frames look like lateral motion.
inline ImageTriplet shifted_triplet(int h, int w, std::uint64_t seed, int shift = 2) {
    const Image wide = smooth_random_image(h, w + 2 * shift, seed);
    ImageTriplet t;
    for (int k = 0; k < 3; ++k) {
        auto img = std::make_shared<Image>(h, w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) (*img)(r, c) = wide(r, c + k * shift);
        t.frames[k] = img;
    }
    t.timestamps = {0.0, 0.1, 0.2};
    t.velocities = {1.0, 1.0};
    t.env_id = "test";
    t.scene_id = "test_0";
    t.frame_index = 2;
    return t;
}

}  // namespace clslam::testing
