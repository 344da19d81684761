// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "sparsect/common.hpp"
#include "sparsect/volume.hpp"

namespace sparsect {

/// Single-channel 2D scalar grid (row-major) with square pixel spacing in mm.
/// Houses x-rays, rendered DRRs and slice renders.
struct Image2D {
    std::size_t rows = 0;
    std::size_t cols = 0;
    double pixel_spacing = 1.0;
    std::vector<double> data;

    Image2D() = default;
    Image2D(std::size_t r, std::size_t c, double spacing, double fill = 0.0)
        : rows(r), cols(c), pixel_spacing(spacing), data(r * c, fill) {
        require(r >= 1 && c >= 1, "Image2D: rows and cols must be >= 1");
        require(spacing > 0, "Image2D: pixel spacing must be > 0");
    }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::size_t size() const { return data.size(); }
};

/// Bilinear sample at continuous (row, col) coordinates; returns `outside`
/// for points beyond the pixel-center hull [0, rows-1] x [0, cols-1].
inline double bilinear_sample(const Image2D& img, double row, double col,
                              double outside = 0.0) {
    const double rmax = static_cast<double>(img.rows) - 1.0;
    const double cmax = static_cast<double>(img.cols) - 1.0;
    if (row < 0.0 || row > rmax || col < 0.0 || col > cmax) return outside;
    const std::size_t r0 = static_cast<std::size_t>(row);
    const std::size_t c0 = static_cast<std::size_t>(col);
    const std::size_t r1 = std::min(r0 + 1, img.rows - 1);
    const std::size_t c1 = std::min(c0 + 1, img.cols - 1);
    const double fr = row - static_cast<double>(r0);
    const double fc = col - static_cast<double>(c0);
    return lerp(lerp(img.at(r0, c0), img.at(r0, c1), fc),
                lerp(img.at(r1, c0), img.at(r1, c1), fc), fr);
}

/// Extracts one plane of a volume. Axial slices index z (image is y rows by
/// x cols), coronal index y (z by x), sagittal index x (z by y).
inline Image2D slice_volume(const Volume3D& v, SlicePlane plane,
                            std::size_t index) {
    const auto& d = v.dim();
    switch (plane) {
        case SlicePlane::Axial: {
            require(index < d.d, "slice_volume: axial index out of range");
            Image2D img(d.h, d.w, v.spacing().x);
            for (std::size_t y = 0; y < d.h; ++y)
                for (std::size_t x = 0; x < d.w; ++x)
                    img.at(y, x) = v.at(index, y, x);
            return img;
        }
        case SlicePlane::Coronal: {
            require(index < d.h, "slice_volume: coronal index out of range");
            Image2D img(d.d, d.w, v.spacing().x);
            for (std::size_t z = 0; z < d.d; ++z)
                for (std::size_t x = 0; x < d.w; ++x)
                    img.at(z, x) = v.at(z, index, x);
            return img;
        }
        case SlicePlane::Sagittal: {
            require(index < d.w, "slice_volume: sagittal index out of range");
            Image2D img(d.d, d.h, v.spacing().y);
            for (std::size_t z = 0; z < d.d; ++z)
                for (std::size_t y = 0; y < d.h; ++y)
                    img.at(z, y) = v.at(z, y, index);
            return img;
        }
    }
    throw validation_error("slice_volume: unknown plane");
}

}  // namespace sparsect
