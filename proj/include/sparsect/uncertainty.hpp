// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "sparsect/common.hpp"
#include "sparsect/image.hpp"
#include "sparsect/volume.hpp"

namespace sparsect {

// ---------------------------------------------------------------------------
// Monte Carlo posterior analysis
// ---------------------------------------------------------------------------

/// Per-voxel statistics over N reconstructions. The truth-dependent maps
/// (bias, squared_bias, mse) are present only when a ground truth was
/// supplied. Variance uses the population (1/N) divisor so that
/// mse = bias^2 + variance holds exactly at finite N.
struct UncertaintyMaps {
    Volume3D mean;
    Volume3D variance;
    std::optional<Volume3D> bias;
    std::optional<Volume3D> squared_bias;
    std::optional<Volume3D> mse;
    std::size_t n_samples = 0;
};

/// Draws N reconstructions; sample n uses seed base_seed ^ n, so samples are
/// mutually independent and individually reproducible.
inline std::vector<Volume3D> mc_sample(
    const std::function<Volume3D(std::uint64_t)>& sampler, std::size_t n,
    std::uint64_t base_seed) {
    require(n >= 1, "mc_sample: N must be >= 1");
    std::vector<Volume3D> samples;
    samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        samples.push_back(sampler(base_seed ^ static_cast<std::uint64_t>(i)));
    return samples;
}

/// Computes per-voxel mean / variance and, with ground truth, bias and MSE.
/// Per-voxel accumulation runs over sorted sample values, so the result is
/// bit-identical under any permutation of the sample list. The decomposition
/// mse = bias^2 + variance is asserted per voxel when truth is given.
inline UncertaintyMaps voxel_stats(const std::vector<Volume3D>& samples,
                                   const Volume3D* ground_truth = nullptr,
                                   unsigned threads = 0) {
    require(!samples.empty(), "voxel_stats: need at least one sample");
    const Dim3 dim = samples[0].dim();
    for (const auto& s : samples)
        require(s.dim() == dim, "voxel_stats: sample shape mismatch");
    if (ground_truth)
        require(ground_truth->dim() == dim,
                "voxel_stats: ground truth shape mismatch");

    const std::size_t n = samples.size();
    const std::size_t voxels = dim.count();
    const double inv_n = 1.0 / static_cast<double>(n);
    const bool with_truth = ground_truth != nullptr;

    std::vector<double> mean(voxels), var(voxels);
    std::vector<double> bias, sq_bias, mse_v;
    if (with_truth) {
        bias.resize(voxels);
        sq_bias.resize(voxels);
        mse_v.resize(voxels);
    }

    parallel_chunks(voxels, threads, [&](std::size_t b, std::size_t e) {
        std::vector<double> buf(n);
        for (std::size_t i = b; i < e; ++i) {
            for (std::size_t k = 0; k < n; ++k) buf[k] = samples[k].data()[i];
            std::sort(buf.begin(), buf.end());
            double m;
            if (buf.front() == buf.back()) {  // mean of equals, exactly
                m = buf.front();
            } else {
                double sum = 0.0;
                for (double x : buf) sum += x;
                m = sum * inv_n;
            }
            double ss = 0.0;
            for (double x : buf) ss += (x - m) * (x - m);
            const double v = ss * inv_n;
            mean[i] = m;
            var[i] = v;
            if (with_truth) {
                const double y = ground_truth->data()[i];
                double se = 0.0;
                for (double x : buf) se += (x - y) * (x - y);
                const double err2 = se * inv_n;
                const double bi = m - y;
                bias[i] = bi;
                sq_bias[i] = bi * bi;
                mse_v[i] = err2;
                const double residual = std::abs(err2 - (bi * bi + v));
                if (residual > 1e-10 * std::max(1.0, err2))
                    throw numeric_error(
                        "voxel_stats: bias-variance decomposition violated");
            }
        }
    });

    const Vec3 sp = samples[0].spacing();
    const Vec3 org = samples[0].origin();
    auto raw = [&](std::vector<double>&& v) {
        return Volume3D(dim, sp, org, VolumeUnit::HU, std::move(v));
    };

    UncertaintyMaps maps{
        Volume3D(dim, sp, org, samples[0].unit(), std::move(mean)),
        raw(std::move(var)),
        std::nullopt,
        std::nullopt,
        std::nullopt,
        n};
    if (with_truth) {
        maps.bias = raw(std::move(bias));
        maps.squared_bias = raw(std::move(sq_bias));
        maps.mse = raw(std::move(mse_v));
    }
    return maps;
}

enum class MapKind { Mean, Variance, Bias, SquaredBias, Mse };

/// Extracts a slice of the chosen map for report output; `index` defaults to
/// the center slice of the requested plane.
inline Image2D render_maps(const UncertaintyMaps& maps, MapKind kind,
                           SlicePlane plane,
                           std::optional<std::size_t> index = std::nullopt) {
    const Volume3D* vol = nullptr;
    switch (kind) {
        case MapKind::Mean: vol = &maps.mean; break;
        case MapKind::Variance: vol = &maps.variance; break;
        case MapKind::Bias: vol = maps.bias ? &*maps.bias : nullptr; break;
        case MapKind::SquaredBias:
            vol = maps.squared_bias ? &*maps.squared_bias : nullptr;
            break;
        case MapKind::Mse: vol = maps.mse ? &*maps.mse : nullptr; break;
    }
    require(vol != nullptr, "render_maps: requested map was not computed");
    std::size_t axis_len = 0;
    switch (plane) {
        case SlicePlane::Axial: axis_len = vol->dim().d; break;
        case SlicePlane::Coronal: axis_len = vol->dim().h; break;
        case SlicePlane::Sagittal: axis_len = vol->dim().w; break;
    }
    const std::size_t idx = index.value_or(axis_len / 2);
    return slice_volume(*vol, plane, idx);
}

}  // namespace sparsect
