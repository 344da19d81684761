// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sparsect/common.hpp"
#include "sparsect/volume.hpp"

namespace sparsect {

// ---------------------------------------------------------------------------
// Reconstruction metrics
// ---------------------------------------------------------------------------

/// Peak signal-to-noise ratio, 10 * log10(i_max^2 / MSE). Identical inputs
/// yield +infinity, which reports render as "inf".
inline double psnr(const Volume3D& a, const Volume3D& b, double i_max) {
    require(a.dim() == b.dim(), "psnr: volume shape mismatch");
    require(i_max > 0, "psnr: i_max must be > 0");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(i_max * i_max / mse);
}

/// Structural similarity over uniform cubic windows of `window` voxels per
/// side, averaged across all valid window positions. Means, variances and
/// covariance are population statistics within each window; c1 = (k1 * L)^2
/// and c2 = (k2 * L)^2 with L the dynamic range.
inline double ssim3d(const Volume3D& a, const Volume3D& b,
                     std::size_t window = 11, double k1 = 0.01,
                     double k2 = 0.03, double dynamic_range = 1.0,
                     unsigned threads = 0) {
    require(a.dim() == b.dim(), "ssim3d: volume shape mismatch");
    require(window >= 1, "ssim3d: window must be >= 1");
    require(dynamic_range > 0, "ssim3d: dynamic range must be > 0");
    const auto& d = a.dim();
    require(d.d >= window && d.h >= window && d.w >= window,
            "ssim3d: volume smaller than the window");

    const std::size_t nd = d.d - window + 1;
    const std::size_t nh = d.h - window + 1;
    const std::size_t nw = d.w - window + 1;
    const double c1 = (k1 * dynamic_range) * (k1 * dynamic_range);
    const double c2 = (k2 * dynamic_range) * (k2 * dynamic_range);
    const double inv_w =
        1.0 / static_cast<double>(window * window * window);

    std::vector<double> per_window(nd * nh * nw);
    parallel_for(per_window.size(), threads, [&](std::size_t i) {
        const std::size_t x0 = i % nw;
        const std::size_t y0 = (i / nw) % nh;
        const std::size_t z0 = i / (nw * nh);
        double sa = 0.0, sb = 0.0;
        for (std::size_t z = z0; z < z0 + window; ++z)
            for (std::size_t y = y0; y < y0 + window; ++y)
                for (std::size_t x = x0; x < x0 + window; ++x) {
                    sa += a.at(z, y, x);
                    sb += b.at(z, y, x);
                }
        const double mu_a = sa * inv_w;
        const double mu_b = sb * inv_w;
        double va = 0.0, vb = 0.0, cov = 0.0;
        for (std::size_t z = z0; z < z0 + window; ++z)
            for (std::size_t y = y0; y < y0 + window; ++y)
                for (std::size_t x = x0; x < x0 + window; ++x) {
                    const double da = a.at(z, y, x) - mu_a;
                    const double db = b.at(z, y, x) - mu_b;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
        va *= inv_w;
        vb *= inv_w;
        cov *= inv_w;
        per_window[i] = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                        ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
    });

    double sum = 0.0;
    for (double v : per_window) sum += v;
    return sum / static_cast<double>(per_window.size());
}

// ---------------------------------------------------------------------------
// Dose-volume histogram statistics
// ---------------------------------------------------------------------------

namespace detail {

inline double dvh_fraction(const Volume3D& dose, const Volume3D& mask,
                           double threshold_gy) {
    require(dose.dim() == mask.dim(), "dvh: dose/mask shape mismatch");
    std::size_t in_mask = 0, above = 0;
    for (std::size_t i = 0; i < dose.size(); ++i) {
        if (mask.data()[i] == 0.0) continue;
        ++in_mask;
        if (dose.data()[i] >= threshold_gy) ++above;
    }
    require(in_mask > 0, "dvh: mask selects no voxels (undefined structure)");
    return 100.0 * static_cast<double>(above) / static_cast<double>(in_mask);
}

}  // namespace detail

/// Percent of the masked structure receiving at least pct% of the
/// prescription dose (e.g. V90%).
inline double dvh_v_percent(const Volume3D& dose, const Volume3D& mask,
                            double prescription_gy, double pct) {
    require(prescription_gy > 0, "dvh_v_percent: prescription must be > 0");
    require(pct >= 0, "dvh_v_percent: percentage must be >= 0");
    return detail::dvh_fraction(dose, mask, pct / 100.0 * prescription_gy);
}

/// Percent of the masked structure receiving at least `threshold_gy`
/// (e.g. V20Gy).
inline double dvh_v_gray(const Volume3D& dose, const Volume3D& mask,
                         double threshold_gy) {
    require(threshold_gy >= 0, "dvh_v_gray: threshold must be >= 0");
    return detail::dvh_fraction(dose, mask, threshold_gy);
}

struct DvhEntry {
    std::string structure;
    double v_percent = 0.0;  // e.g. V90% value, in percent of structure volume
    double v_gray = 0.0;     // e.g. V20Gy value, in percent of structure volume
};

struct DvhReport {
    std::vector<DvhEntry> entries;
};

/// Per-structure absolute differences |gt - recon| for each DVH metric.
/// Structures are matched by name and must coincide.
inline DvhReport dvh_error(const DvhReport& gt, const DvhReport& recon) {
    require(gt.entries.size() == recon.entries.size(),
            "dvh_error: reports list different structures");
    DvhReport out;
    out.entries.reserve(gt.entries.size());
    for (const auto& g : gt.entries) {
        const DvhEntry* match = nullptr;
        for (const auto& r : recon.entries)
            if (r.structure == g.structure) {
                match = &r;
                break;
            }
        require(match != nullptr,
                "dvh_error: structure missing from reconstruction report: " +
                    g.structure);
        out.entries.push_back({g.structure,
                               std::abs(g.v_percent - match->v_percent),
                               std::abs(g.v_gray - match->v_gray)});
    }
    return out;
}

}  // namespace sparsect
