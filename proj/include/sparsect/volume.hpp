// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sparsect/common.hpp"

namespace sparsect {

// ---------------------------------------------------------------------------
// Volume3D
// ---------------------------------------------------------------------------

enum class VolumeUnit : std::uint8_t { HU = 0, Normalized = 1 };

struct Dim3 {
    std::size_t d = 0;  // slices along z
    std::size_t h = 0;  // rows along y
    std::size_t w = 0;  // columns along x

    std::size_t count() const { return d * h * w; }
    bool operator==(const Dim3&) const = default;
};

/// Isotropic-or-not 3D scalar grid with voxel spacing and world origin.
/// Storage is x-fastest: flat index = (z * h + y) * w + x. The world
/// coordinate of voxel (ix, iy, iz) is origin + (ix, iy, iz) * spacing, where
/// indices address voxel centers. Instances are immutable after construction
/// and safe to share across threads.
class Volume3D {
  public:
    Volume3D(Dim3 dim, Vec3 spacing, Vec3 origin, VolumeUnit unit,
             std::vector<double> data)
        : dim_(dim), spacing_(spacing), origin_(origin), unit_(unit),
          data_(std::move(data)) {
        require(dim_.d >= 1 && dim_.h >= 1 && dim_.w >= 1,
                "Volume3D: all dimensions must be >= 1");
        require(spacing_.x > 0 && spacing_.y > 0 && spacing_.z > 0,
                "Volume3D: spacing components must be > 0");
        require(data_.size() == dim_.count(),
                "Volume3D: data size does not match dimensions");
        if (unit_ == VolumeUnit::Normalized) {
            for (double v : data_)
                require(v >= 0.0 && v <= 1.0,
                        "Volume3D: normalized data must lie in [0,1]");
        }
    }

    static Volume3D filled(Dim3 dim, Vec3 spacing, Vec3 origin, VolumeUnit unit,
                           double value) {
        return Volume3D(dim, spacing, origin, unit,
                        std::vector<double>(dim.count(), value));
    }

    /// Origin that places the volume center at world (0,0,0), the rotation
    /// pivot used throughout the projector.
    static Vec3 centered_origin(Dim3 dim, Vec3 spacing) {
        return {-0.5 * static_cast<double>(dim.w - 1) * spacing.x,
                -0.5 * static_cast<double>(dim.h - 1) * spacing.y,
                -0.5 * static_cast<double>(dim.d - 1) * spacing.z};
    }

    const Dim3& dim() const { return dim_; }
    const Vec3& spacing() const { return spacing_; }
    const Vec3& origin() const { return origin_; }
    VolumeUnit unit() const { return unit_; }
    const std::vector<double>& data() const { return data_; }
    std::size_t size() const { return data_.size(); }

    double at(std::size_t z, std::size_t y, std::size_t x) const {
        return data_[(z * dim_.h + y) * dim_.w + x];
    }

    Vec3 world_at(std::size_t ix, std::size_t iy, std::size_t iz) const {
        return {origin_.x + static_cast<double>(ix) * spacing_.x,
                origin_.y + static_cast<double>(iy) * spacing_.y,
                origin_.z + static_cast<double>(iz) * spacing_.z};
    }

    /// Continuous index coordinates of a world point.
    Vec3 index_of(const Vec3& world) const {
        return {(world.x - origin_.x) / spacing_.x,
                (world.y - origin_.y) / spacing_.y,
                (world.z - origin_.z) / spacing_.z};
    }

    double min_spacing() const {
        return std::min({spacing_.x, spacing_.y, spacing_.z});
    }

  private:
    Dim3 dim_;
    Vec3 spacing_;
    Vec3 origin_;
    VolumeUnit unit_;
    std::vector<double> data_;
};

/// Trilinear sample at continuous index coordinates (ix, iy, iz). The
/// supported region is the full cell extent [-0.5, n-0.5] per axis; inside it
/// coordinates are clamped to the voxel-center hull before interpolation (so
/// the outer half-voxel shell extends edge values), outside it the
/// `background` value is returned.
inline double sample_trilinear(const Volume3D& v, double ix, double iy,
                               double iz, double background = 0.0) {
    const auto& d = v.dim();
    const double nx = static_cast<double>(d.w);
    const double ny = static_cast<double>(d.h);
    const double nz = static_cast<double>(d.d);
    if (ix < -0.5 || ix > nx - 0.5 || iy < -0.5 || iy > ny - 0.5 ||
        iz < -0.5 || iz > nz - 0.5)
        return background;
    ix = std::clamp(ix, 0.0, nx - 1.0);
    iy = std::clamp(iy, 0.0, ny - 1.0);
    iz = std::clamp(iz, 0.0, nz - 1.0);

    const std::size_t x0 = static_cast<std::size_t>(ix);
    const std::size_t y0 = static_cast<std::size_t>(iy);
    const std::size_t z0 = static_cast<std::size_t>(iz);
    const std::size_t x1 = std::min(x0 + 1, d.w - 1);
    const std::size_t y1 = std::min(y0 + 1, d.h - 1);
    const std::size_t z1 = std::min(z0 + 1, d.d - 1);
    const double fx = ix - static_cast<double>(x0);
    const double fy = iy - static_cast<double>(y0);
    const double fz = iz - static_cast<double>(z0);

    const double c00 = lerp(v.at(z0, y0, x0), v.at(z0, y0, x1), fx);
    const double c01 = lerp(v.at(z0, y1, x0), v.at(z0, y1, x1), fx);
    const double c10 = lerp(v.at(z1, y0, x0), v.at(z1, y0, x1), fx);
    const double c11 = lerp(v.at(z1, y1, x0), v.at(z1, y1, x1), fx);
    return lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
}

inline double sample_trilinear_world(const Volume3D& v, const Vec3& world,
                                     double background = 0.0) {
    const Vec3 idx = v.index_of(world);
    return sample_trilinear(v, idx.x, idx.y, idx.z, background);
}

// ---------------------------------------------------------------------------
// Preprocessing transforms
// ---------------------------------------------------------------------------

/// Clamps every voxel of an HU volume into [lo, hi].
inline Volume3D clip_values(const Volume3D& v, double lo, double hi) {
    require(v.unit() == VolumeUnit::HU, "clip_values: input must be HU-tagged");
    require(lo < hi, "clip_values: lo must be < hi");
    std::vector<double> out(v.data());
    for (double& x : out) x = std::clamp(x, lo, hi);
    return Volume3D(v.dim(), v.spacing(), v.origin(), VolumeUnit::HU,
                    std::move(out));
}

/// Maps HU values in [lo, hi] linearly onto [0, 1].
inline Volume3D normalize(const Volume3D& v, double lo, double hi) {
    require(v.unit() == VolumeUnit::HU, "normalize: input must be HU-tagged");
    require(hi != lo, "normalize: degenerate range (hi == lo)");
    require(lo < hi, "normalize: lo must be < hi");
    const double scale = 1.0 / (hi - lo);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = v.data()[i];
        require(x >= lo && x <= hi,
                "normalize: input must be clipped to [lo, hi] first");
        out[i] = (x - lo) * scale;
    }
    return Volume3D(v.dim(), v.spacing(), v.origin(), VolumeUnit::Normalized,
                    std::move(out));
}

/// Inverse of normalize.
inline Volume3D denormalize(const Volume3D& v, double lo, double hi) {
    require(v.unit() == VolumeUnit::Normalized,
            "denormalize: input must be normalized");
    require(lo < hi, "denormalize: lo must be < hi");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = lo + v.data()[i] * (hi - lo);
    return Volume3D(v.dim(), v.spacing(), v.origin(), VolumeUnit::HU,
                    std::move(out));
}

/// Resamples to isotropic `target_spacing`, preserving the physical extent
/// and grid center. Values are trilinear samples at the new voxel centers;
/// points outside the source support take `background`.
inline Volume3D resample_isotropic(const Volume3D& v, double target_spacing,
                                   double background = 0.0) {
    require(target_spacing > 0, "resample_isotropic: target spacing must be > 0");
    const Vec3 sp = v.spacing();
    if (sp.x == target_spacing && sp.y == target_spacing &&
        sp.z == target_spacing)
        return v;

    const auto& d = v.dim();
    auto new_count = [&](std::size_t n, double s) {
        const double extent = static_cast<double>(n) * s;
        return static_cast<std::size_t>(
            std::max<long long>(1, std::llround(extent / target_spacing)));
    };
    const Dim3 nd{new_count(d.d, sp.z), new_count(d.h, sp.y),
                  new_count(d.w, sp.x)};

    // Keep the grid center fixed.
    const Vec3 center{v.origin().x + 0.5 * (double(d.w) - 1.0) * sp.x,
                      v.origin().y + 0.5 * (double(d.h) - 1.0) * sp.y,
                      v.origin().z + 0.5 * (double(d.d) - 1.0) * sp.z};
    const Vec3 t{target_spacing, target_spacing, target_spacing};
    const Vec3 new_origin{center.x - 0.5 * (double(nd.w) - 1.0) * t.x,
                          center.y - 0.5 * (double(nd.h) - 1.0) * t.y,
                          center.z - 0.5 * (double(nd.d) - 1.0) * t.z};

    std::vector<double> out(nd.count());
    for (std::size_t z = 0; z < nd.d; ++z)
        for (std::size_t y = 0; y < nd.h; ++y)
            for (std::size_t x = 0; x < nd.w; ++x) {
                const Vec3 world{new_origin.x + double(x) * t.x,
                                 new_origin.y + double(y) * t.y,
                                 new_origin.z + double(z) * t.z};
                out[(z * nd.h + y) * nd.w + x] =
                    sample_trilinear_world(v, world, background);
            }
    return Volume3D(nd, t, new_origin, v.unit(), std::move(out));
}

namespace detail {

/// Trilinear resize of a (d,h,w) block to (n,n,n) with cell-centered index
/// mapping; same-size axes copy exactly.
inline Volume3D resize_to_cube(const Volume3D& v, std::size_t n) {
    const auto& d = v.dim();
    if (d.d == n && d.h == n && d.w == n) return v;
    const double sx = static_cast<double>(d.w) / static_cast<double>(n);
    const double sy = static_cast<double>(d.h) / static_cast<double>(n);
    const double sz = static_cast<double>(d.d) / static_cast<double>(n);
    const Dim3 nd{n, n, n};
    std::vector<double> out(nd.count());
    for (std::size_t z = 0; z < n; ++z)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double ix = (double(x) + 0.5) * sx - 0.5;
                const double iy = (double(y) + 0.5) * sy - 0.5;
                const double iz = (double(z) + 0.5) * sz - 0.5;
                out[(z * n + y) * n + x] = sample_trilinear(v, ix, iy, iz);
            }
    const Vec3 sp{v.spacing().x * sx, v.spacing().y * sy, v.spacing().z * sz};
    const Vec3 org{v.origin().x + (0.5 * sx - 0.5) * v.spacing().x,
                   v.origin().y + (0.5 * sy - 0.5) * v.spacing().y,
                   v.origin().z + (0.5 * sz - 0.5) * v.spacing().z};
    return Volume3D(nd, sp, org, v.unit(), std::move(out));
}

}  // namespace detail

/// Center-crops to the largest centered cube, then trilinearly resizes the
/// crop to n^3 voxels.
inline Volume3D crop_resize_cube(const Volume3D& v, std::size_t n) {
    require(n >= 1, "crop_resize_cube: n must be >= 1");
    const auto& d = v.dim();
    const std::size_t cube = std::min({d.d, d.h, d.w});
    const std::size_t z0 = (d.d - cube) / 2;
    const std::size_t y0 = (d.h - cube) / 2;
    const std::size_t x0 = (d.w - cube) / 2;

    std::vector<double> crop(cube * cube * cube);
    for (std::size_t z = 0; z < cube; ++z)
        for (std::size_t y = 0; y < cube; ++y)
            for (std::size_t x = 0; x < cube; ++x)
                crop[(z * cube + y) * cube + x] = v.at(z0 + z, y0 + y, x0 + x);
    const Vec3 org{v.origin().x + double(x0) * v.spacing().x,
                   v.origin().y + double(y0) * v.spacing().y,
                   v.origin().z + double(z0) * v.spacing().z};
    Volume3D cropped(Dim3{cube, cube, cube}, v.spacing(), org, v.unit(),
                     std::move(crop));
    return detail::resize_to_cube(cropped, n);
}

// ---------------------------------------------------------------------------
// Synthetic phantoms
// ---------------------------------------------------------------------------

struct Ellipsoid {
    Vec3 center;                // mm
    Vec3 semi_axes;             // mm, all > 0
    Vec3 rotation_deg;          // per-axis angles, applied as Rz * Ry * Rx
    double intensity = 0.0;     // additive
};

struct Phantom {
    std::vector<Ellipsoid> ellipsoids;
};

namespace detail {

/// Rotates `p` into the ellipsoid's canonical frame (inverse of Rz*Ry*Rx).
inline Vec3 to_canonical(const Vec3& p, const Vec3& rot_deg) {
    Vec3 q = p;
    // Inverse rotations in reverse order.
    const double az = deg_to_rad(rot_deg.z);
    const double ay = deg_to_rad(rot_deg.y);
    const double ax = deg_to_rad(rot_deg.x);
    q = rotate_z(q, -az);
    {  // rotate about y by -ay
        const double c = std::cos(-ay), s = std::sin(-ay);
        q = {c * q.x + s * q.z, q.y, -s * q.x + c * q.z};
    }
    {  // rotate about x by -ax
        const double c = std::cos(-ax), s = std::sin(-ax);
        q = {q.x, c * q.y - s * q.z, s * q.y + c * q.z};
    }
    return q;
}

inline bool ellipsoid_contains(const Ellipsoid& e, const Vec3& world) {
    const Vec3 q = to_canonical(world - e.center, e.rotation_deg);
    const double rx = q.x / e.semi_axes.x;
    const double ry = q.y / e.semi_axes.y;
    const double rz = q.z / e.semi_axes.z;
    return rx * rx + ry * ry + rz * rz <= 1.0;
}

}  // namespace detail

inline constexpr std::size_t kMaxPhantomEllipsoids = 64;

/// Renders a phantom on an n^3 grid with the given isotropic spacing, volume
/// center at world (0,0,0). A voxel's value is the sum of intensities of all
/// ellipsoids containing its center; summation order is canonicalized (sorted
/// contributions) so the result is bit-identical under any permutation of the
/// ellipsoid list.
inline Volume3D make_phantom(const Phantom& p, std::size_t n,
                             double spacing_mm, unsigned threads = 0) {
    require(n >= 1, "make_phantom: n must be >= 1");
    require(spacing_mm > 0, "make_phantom: spacing must be > 0");
    require(p.ellipsoids.size() <= kMaxPhantomEllipsoids,
            "make_phantom: too many ellipsoids");
    for (const auto& e : p.ellipsoids)
        require(e.semi_axes.x > 0 && e.semi_axes.y > 0 && e.semi_axes.z > 0,
                "make_phantom: semi-axes must be > 0");

    const Dim3 dim{n, n, n};
    const Vec3 sp{spacing_mm, spacing_mm, spacing_mm};
    const Vec3 origin = Volume3D::centered_origin(dim, sp);
    std::vector<double> data(dim.count(), 0.0);

    parallel_chunks(dim.count(), threads, [&](std::size_t b, std::size_t e) {
        std::array<double, kMaxPhantomEllipsoids> hits{};
        for (std::size_t i = b; i < e; ++i) {
            const std::size_t x = i % n;
            const std::size_t y = (i / n) % n;
            const std::size_t z = i / (n * n);
            const Vec3 world{origin.x + double(x) * spacing_mm,
                             origin.y + double(y) * spacing_mm,
                             origin.z + double(z) * spacing_mm};
            std::size_t count = 0;
            for (const auto& el : p.ellipsoids)
                if (detail::ellipsoid_contains(el, world))
                    hits[count++] = el.intensity;
            std::sort(hits.begin(), hits.begin() + count);
            double sum = 0.0;
            for (std::size_t k = 0; k < count; ++k) sum += hits[k];
            data[i] = sum;
        }
    });
    return Volume3D(dim, sp, origin, VolumeUnit::HU, std::move(data));
}

/// Parses the phantom definition format: one ellipsoid per line,
/// `cx cy cz  ax ay az  rz ry rx  intensity` (mm, degrees); '#' comments.
inline Phantom parse_phantom(std::istream& in) {
    Phantom p;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream row(line);
        Ellipsoid e;
        if (!(row >> e.center.x)) continue;  // blank line
        if (!(row >> e.center.y >> e.center.z >> e.semi_axes.x >>
              e.semi_axes.y >> e.semi_axes.z >> e.rotation_deg.z >>
              e.rotation_deg.y >> e.rotation_deg.x >> e.intensity))
            throw io_error("parse_phantom: malformed line " +
                           std::to_string(lineno));
        p.ellipsoids.push_back(e);
    }
    require(p.ellipsoids.size() <= kMaxPhantomEllipsoids,
            "parse_phantom: too many ellipsoids");
    return p;
}

inline Phantom load_phantom_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open phantom file: " + path);
    return parse_phantom(in);
}

enum class SlicePlane { Axial, Coronal, Sagittal };

}  // namespace sparsect
