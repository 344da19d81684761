// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sparsect/common.hpp"
#include "sparsect/image.hpp"
#include "sparsect/volume.hpp"

namespace sparsect {

// ---------------------------------------------------------------------------
// Acquisition geometry
// ---------------------------------------------------------------------------

enum class BeamType { Parallel, Cone };

/// One planar acquisition. The gantry rotates about the axial (+z) world
/// axis; a point is first taken into the rotated frame, p' = Rz(angle)*p + t,
/// where the ray direction is the rotated +y axis. Detector columns follow
/// the rotated x axis and detector rows follow world z, both in mm about the
/// detector center. For cone beams the source sits at depth -dso and the
/// detector plane at depth dsd - dso.
struct ProjectionGeometry {
    BeamType beam = BeamType::Parallel;
    double angle_deg = 0.0;
    double dso = 1000.0;  // source to volume center, mm (cone only)
    double dsd = 1500.0;  // source to detector, mm (cone only)
    std::size_t detector_rows = 128;
    std::size_t detector_cols = 128;
    double detector_spacing = 1.0;  // mm per detector pixel
    Vec3 translation{};             // post-rotation world offset, mm

    void validate() const {
        require(detector_rows >= 1 && detector_cols >= 1,
                "geometry: detector must be at least 1x1");
        require(detector_spacing > 0, "geometry: detector spacing must be > 0");
        if (beam == BeamType::Cone)
            require(dsd > dso && dso > 0,
                    "geometry: cone beam requires dsd > dso > 0");
    }

    ProjectionGeometry with_angle(double deg) const {
        ProjectionGeometry g = *this;
        g.angle_deg = deg;
        return g;
    }
};

/// Continuous detector pixel coordinates; u indexes rows, v columns.
struct DetectorCoord {
    double u = 0.0;
    double v = 0.0;
};

/// Projects a world point onto the detector. Parallel beams drop the depth
/// coordinate; cone beams scale laterally by dsd / (dso + depth).
inline DetectorCoord project_point(const Vec3& p, const ProjectionGeometry& g) {
    g.validate();
    const Vec3 q = rotate_z(p, deg_to_rad(g.angle_deg)) + g.translation;
    double col_mm = q.x;  // lateral
    double row_mm = q.z;  // world z maps to detector rows
    if (g.beam == BeamType::Cone) {
        const double denom = g.dso + q.y;
        if (denom <= 0.0)
            throw numeric_error("project_point: point at or behind the source plane");
        const double mag = g.dsd / denom;
        col_mm *= mag;
        row_mm *= mag;
    }
    const double cr = 0.5 * (static_cast<double>(g.detector_rows) - 1.0);
    const double cc = 0.5 * (static_cast<double>(g.detector_cols) - 1.0);
    return {cr + row_mm / g.detector_spacing, cc + col_mm / g.detector_spacing};
}

// ---------------------------------------------------------------------------
// DRR rendering
// ---------------------------------------------------------------------------

namespace detail {

struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit length
};

/// World-frame ray for detector pixel (r, c).
inline Ray pixel_ray(std::size_t r, std::size_t c,
                     const ProjectionGeometry& g) {
    const double cr = 0.5 * (static_cast<double>(g.detector_rows) - 1.0);
    const double cc = 0.5 * (static_cast<double>(g.detector_cols) - 1.0);
    const double col_mm = (static_cast<double>(c) - cc) * g.detector_spacing;
    const double row_mm = (static_cast<double>(r) - cr) * g.detector_spacing;
    const double rad = deg_to_rad(g.angle_deg);

    Vec3 origin_rot, dir_rot;
    if (g.beam == BeamType::Parallel) {
        origin_rot = {col_mm, 0.0, row_mm};
        dir_rot = {0.0, 1.0, 0.0};
    } else {
        const Vec3 source{0.0, -g.dso, 0.0};
        const Vec3 pixel{col_mm, g.dsd - g.dso, row_mm};
        origin_rot = source;
        dir_rot = (pixel - source).normalized();
    }
    return {rotate_z(origin_rot - g.translation, -rad), rotate_z(dir_rot, -rad)};
}

/// Slab intersection with the volume's full cell extent; returns false when
/// the ray misses. Cone rays march forward from the source only; parallel
/// rays are unbounded lines.
inline bool clip_to_volume(const Ray& ray, const Volume3D& v, bool forward_only,
                           double& t0, double& t1) {
    const Vec3 lo = v.origin() - v.spacing() * 0.5;
    const Vec3 hi{v.origin().x + (double(v.dim().w) - 0.5) * v.spacing().x,
                  v.origin().y + (double(v.dim().h) - 0.5) * v.spacing().y,
                  v.origin().z + (double(v.dim().d) - 0.5) * v.spacing().z};
    t0 = -std::numeric_limits<double>::infinity();
    t1 = std::numeric_limits<double>::infinity();
    const double o[3] = {ray.origin.x, ray.origin.y, ray.origin.z};
    const double d[3] = {ray.dir.x, ray.dir.y, ray.dir.z};
    const double lo3[3] = {lo.x, lo.y, lo.z};
    const double hi3[3] = {hi.x, hi.y, hi.z};
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) {
            if (o[a] < lo3[a] || o[a] > hi3[a]) return false;
            continue;
        }
        double ta = (lo3[a] - o[a]) / d[a];
        double tb = (hi3[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (forward_only) t0 = std::max(t0, 0.0);
    return t1 > t0;
}

inline double integrate_ray(const Ray& ray, const Volume3D& v,
                            bool forward_only, double step) {
    double t0, t1;
    if (!clip_to_volume(ray, v, forward_only, t0, t1)) return 0.0;
    const std::size_t n =
        static_cast<std::size_t>(std::ceil((t1 - t0) / step));
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = t0 + (static_cast<double>(k) + 0.5) * step;
        const Vec3 p = ray.origin + ray.dir * t;
        sum += sample_trilinear_world(v, p);
    }
    return sum * step;
}

}  // namespace detail

/// Renders a DRR by fixed-step ray marching with trilinear sampling. Each
/// pixel is the attenuation line integral along its ray (no source intensity
/// or log transform). `step_mm` <= 0 selects the default of half the minimum
/// voxel spacing. Rays that miss the volume yield zero-valued pixels.
inline Image2D render_drr(const Volume3D& v, const ProjectionGeometry& g,
                          double step_mm = 0.0, unsigned threads = 0) {
    g.validate();
    const double step = step_mm > 0.0 ? step_mm : 0.5 * v.min_spacing();
    const bool forward_only = g.beam == BeamType::Cone;
    Image2D img(g.detector_rows, g.detector_cols, g.detector_spacing);
    parallel_for(img.size(), threads, [&](std::size_t i) {
        const std::size_t r = i / g.detector_cols;
        const std::size_t c = i % g.detector_cols;
        img.data[i] = detail::integrate_ray(detail::pixel_ray(r, c, g), v,
                                            forward_only, step);
    });
    return img;
}

/// One DRR per angle; all other geometry parameters are shared.
inline std::vector<Image2D> generate_views(const Volume3D& v,
                                           const std::vector<double>& angles_deg,
                                           const ProjectionGeometry& base,
                                           double step_mm = 0.0,
                                           unsigned threads = 0) {
    require(!angles_deg.empty(), "generate_views: angle list must be nonempty");
    std::vector<Image2D> views;
    views.reserve(angles_deg.size());
    for (double a : angles_deg)
        views.push_back(render_drr(v, base.with_angle(a), step_mm, threads));
    return views;
}

/// The eight acquisition angles used by default: 0, 22.5, ..., 157.5 degrees.
inline std::vector<double> default_view_angles() {
    std::vector<double> a(8);
    for (int i = 0; i < 8; ++i) a[i] = 22.5 * i;
    return a;
}

}  // namespace sparsect
