// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "sparsect/common.hpp"
#include "sparsect/image.hpp"
#include "sparsect/projector.hpp"

namespace sparsect {

// ---------------------------------------------------------------------------
// Grids and feature containers
// ---------------------------------------------------------------------------

/// World positions of a regular (d', h', w') point grid; index (ix, iy, iz)
/// maps to origin + (ix, iy, iz) * spacing, like Volume3D voxel centers.
struct GridSpec {
    Dim3 dim;
    Vec3 spacing{1, 1, 1};
    Vec3 origin{};

    Vec3 world_at(std::size_t ix, std::size_t iy, std::size_t iz) const {
        return {origin.x + double(ix) * spacing.x,
                origin.y + double(iy) * spacing.y,
                origin.z + double(iz) * spacing.z};
    }

    bool operator==(const GridSpec&) const = default;

    /// Grid of `target` cells spanning the same physical extent as `v`,
    /// cell-centered (the conditioning grid of the latent space).
    static GridSpec cover(const Volume3D& v, Dim3 target) {
        require(target.d >= 1 && target.h >= 1 && target.w >= 1,
                "GridSpec::cover: target dims must be >= 1");
        const auto& d = v.dim();
        const Vec3 sp{v.spacing().x * double(d.w) / double(target.w),
                      v.spacing().y * double(d.h) / double(target.h),
                      v.spacing().z * double(d.d) / double(target.d)};
        const Vec3 box_min = v.origin() - v.spacing() * 0.5;
        const Vec3 org = box_min + sp * 0.5;
        return {target, sp, org};
    }

    /// Cube grid of n^3 cells spanning `extent_mm` per side, centered at the
    /// world origin.
    static GridSpec centered_cube(std::size_t n, double extent_mm) {
        require(n >= 1 && extent_mm > 0, "GridSpec::centered_cube: bad arguments");
        const double sp = extent_mm / double(n);
        const double org = -0.5 * extent_mm + 0.5 * sp;
        return {Dim3{n, n, n}, Vec3{sp, sp, sp}, Vec3{org, org, org}};
    }
};

/// c-channel 2D feature map extracted from one x-ray, carrying the
/// acquisition geometry of its source view. Channel-major storage.
struct FeatureImage {
    std::size_t channels = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    ProjectionGeometry geometry{};

    FeatureImage() = default;
    FeatureImage(std::size_t c, std::size_t r, std::size_t w)
        : channels(c), rows(r), cols(w), data(c * r * w, 0.0) {
        require(c >= 1 && r >= 1 && w >= 1, "FeatureImage: empty shape");
    }

    double& at(std::size_t ch, std::size_t r, std::size_t c) {
        return data[(ch * rows + r) * cols + c];
    }
    double at(std::size_t ch, std::size_t r, std::size_t c) const {
        return data[(ch * rows + r) * cols + c];
    }

    /// Bilinear sample of one channel at continuous (row, col); zero outside
    /// the detector.
    double sample(std::size_t ch, double row, double col) const {
        const double rmax = double(rows) - 1.0;
        const double cmax = double(cols) - 1.0;
        if (row < 0.0 || row > rmax || col < 0.0 || col > cmax) return 0.0;
        const std::size_t r0 = static_cast<std::size_t>(row);
        const std::size_t c0 = static_cast<std::size_t>(col);
        const std::size_t r1 = std::min(r0 + 1, rows - 1);
        const std::size_t c1 = std::min(c0 + 1, cols - 1);
        const double fr = row - double(r0);
        const double fc = col - double(c0);
        return lerp(lerp(at(ch, r0, c0), at(ch, r0, c1), fc),
                    lerp(at(ch, r1, c0), at(ch, r1, c1), fc), fr);
    }
};

/// c-channel 3D feature grid on a GridSpec; channel-major. Holds both
/// per-view backprojections and the fused average.
struct FeatureVolume {
    std::size_t channels = 0;
    GridSpec grid;
    std::vector<double> data;

    FeatureVolume() = default;
    FeatureVolume(std::size_t c, GridSpec g)
        : channels(c), grid(g), data(c * g.dim.count(), 0.0) {
        require(c >= 1, "FeatureVolume: channels must be >= 1");
    }

    std::size_t cells() const { return grid.dim.count(); }

    double& at(std::size_t ch, std::size_t z, std::size_t y, std::size_t x) {
        return data[((ch * grid.dim.d + z) * grid.dim.h + y) * grid.dim.w + x];
    }
    double at(std::size_t ch, std::size_t z, std::size_t y, std::size_t x) const {
        return data[((ch * grid.dim.d + z) * grid.dim.h + y) * grid.dim.w + x];
    }
};

// ---------------------------------------------------------------------------
// Feature extractors
// ---------------------------------------------------------------------------

/// Maps an x-ray to a same-resolution feature image with a fixed channel
/// count. Stands in for the learned 2D feature network; implementations must
/// be deterministic.
class FeatureExtractor {
  public:
    virtual ~FeatureExtractor() = default;
    virtual std::size_t channels() const = 0;
    virtual FeatureImage extract(const Image2D& image) const = 0;
};

/// c = 1, feature = pixel value.
class IdentityExtractor final : public FeatureExtractor {
  public:
    std::size_t channels() const override { return 1; }
    FeatureImage extract(const Image2D& image) const override {
        FeatureImage f(1, image.rows, image.cols);
        std::copy(image.data.begin(), image.data.end(), f.data.begin());
        return f;
    }
};

namespace detail {

/// Separable Gaussian blur with replicate borders; the kernel is normalized
/// so constants are preserved exactly.
inline Image2D gaussian_blur(const Image2D& img, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * (k / sigma) * (k / sigma));
        sum += kernel[k + radius];
    }
    for (double& w : kernel) w /= sum;

    const long rows = static_cast<long>(img.rows);
    const long cols = static_cast<long>(img.cols);
    Image2D tmp(img.rows, img.cols, img.pixel_spacing);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const long cc = std::clamp(c + k, 0L, cols - 1);
                acc += kernel[k + radius] * img.at(r, cc);
            }
            tmp.at(r, c) = acc;
        }
    Image2D out(img.rows, img.cols, img.pixel_spacing);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const long rr = std::clamp(r + k, 0L, rows - 1);
                acc += kernel[k + radius] * tmp.at(rr, c);
            }
            out.at(r, c) = acc;
        }
    return out;
}

}  // namespace detail

/// Fixed three-channel difference-of-Gaussians band-pass. Each channel is
/// blur(sigma) - blur(2*sigma) at sigma in {1, 2, 4} pixels, so the response
/// to any constant image is identically zero.
class BandpassExtractor final : public FeatureExtractor {
  public:
    std::size_t channels() const override { return 3; }
    FeatureImage extract(const Image2D& image) const override {
        static constexpr double kSigmas[3] = {1.0, 2.0, 4.0};
        FeatureImage f(3, image.rows, image.cols);
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const Image2D narrow = detail::gaussian_blur(image, kSigmas[ch]);
            const Image2D wide = detail::gaussian_blur(image, 2.0 * kSigmas[ch]);
            for (std::size_t i = 0; i < image.size(); ++i)
                f.data[ch * image.size() + i] = narrow.data[i] - wide.data[i];
        }
        return f;
    }
};

// ---------------------------------------------------------------------------
// Backprojection and fusion
// ---------------------------------------------------------------------------

/// Resamples a feature image into 3D: every grid point is projected onto the
/// view's detector and all channels are bilinearly sampled there. Points that
/// project outside the detector contribute zero.
inline FeatureVolume backproject(const FeatureImage& f, const GridSpec& grid,
                                 unsigned threads = 0) {
    require(grid.dim.count() > 0, "backproject: empty grid");
    f.geometry.validate();
    FeatureVolume out(f.channels, grid);
    const std::size_t cells = grid.dim.count();
    parallel_for(cells, threads, [&](std::size_t i) {
        const std::size_t x = i % grid.dim.w;
        const std::size_t y = (i / grid.dim.w) % grid.dim.h;
        const std::size_t z = i / (grid.dim.w * grid.dim.h);
        const DetectorCoord uv = project_point(grid.world_at(x, y, z), f.geometry);
        for (std::size_t ch = 0; ch < f.channels; ++ch)
            out.data[ch * cells + i] = f.sample(ch, uv.u, uv.v);
    });
    return out;
}

/// Element-wise average over K feature volumes. Per-element contributions
/// are sorted before summation, which makes the result bit-identical under
/// any permutation of the input list.
inline FeatureVolume fuse(const std::vector<FeatureVolume>& volumes,
                          unsigned threads = 0) {
    require(!volumes.empty(), "fuse: need at least one feature volume");
    const std::size_t k = volumes.size();
    require(k <= 1024, "fuse: too many views");
    for (const auto& v : volumes)
        require(v.channels == volumes[0].channels && v.grid == volumes[0].grid,
                "fuse: feature volumes must share shape and channel count");

    FeatureVolume out(volumes[0].channels, volumes[0].grid);
    const std::size_t n = out.data.size();
    const double inv_k = 1.0 / static_cast<double>(k);
    parallel_chunks(n, threads, [&](std::size_t b, std::size_t e) {
        std::vector<double> buf(k);
        for (std::size_t i = b; i < e; ++i) {
            for (std::size_t j = 0; j < k; ++j) buf[j] = volumes[j].data[i];
            std::sort(buf.begin(), buf.end());
            if (buf.front() == buf.back()) {  // mean of equals, exactly
                out.data[i] = buf.front();
                continue;
            }
            double sum = 0.0;
            for (double x : buf) sum += x;
            out.data[i] = sum * inv_k;
        }
    });
    return out;
}

/// One x-ray together with the geometry it was acquired under.
struct XRayView {
    Image2D image;
    ProjectionGeometry geometry;
};

/// Builds the diffusion conditioning signal: extract 2D features from each
/// view, backproject them through the acquisition geometry onto `grid`, and
/// average across views.
inline FeatureVolume build_condition(const std::vector<XRayView>& views,
                                     const FeatureExtractor& extractor,
                                     const GridSpec& grid,
                                     unsigned threads = 0) {
    require(!views.empty(), "build_condition: need at least one view");
    std::vector<FeatureVolume> parts;
    parts.reserve(views.size());
    for (const auto& view : views) {
        FeatureImage f = extractor.extract(view.image);
        f.geometry = view.geometry;
        parts.push_back(backproject(f, grid, threads));
    }
    return fuse(parts, threads);
}

}  // namespace sparsect
