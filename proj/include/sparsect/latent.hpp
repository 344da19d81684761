// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "sparsect/common.hpp"
#include "sparsect/fusion.hpp"
#include "sparsect/image.hpp"
#include "sparsect/tensor.hpp"
#include "sparsect/volume.hpp"

namespace sparsect {

// ---------------------------------------------------------------------------
// Codebook quantization
// ---------------------------------------------------------------------------

/// Finite dictionary of embedding vectors (count x dim, row-major). Entries
/// must be pairwise distinct so nearest-neighbor results are well defined
/// after lowest-index tie-breaking.
class Codebook {
  public:
    Codebook(std::size_t dim, std::vector<double> flat)
        : dim_(dim), flat_(std::move(flat)) {
        require(dim_ >= 1, "Codebook: dimension must be >= 1");
        require(!flat_.empty() && flat_.size() % dim_ == 0,
                "Codebook: entry data must be a nonempty multiple of dim");
    }

    static Codebook random(std::size_t count, std::size_t dim,
                           std::uint64_t seed) {
        require(count >= 1, "Codebook: count must be >= 1");
        const CounterRng rng(seed);
        std::vector<double> flat(count * dim);
        for (std::size_t i = 0; i < flat.size(); ++i)
            flat[i] = rng.gaussian(i);
        return Codebook(dim, std::move(flat));
    }

    std::size_t size() const { return flat_.size() / dim_; }
    std::size_t dim() const { return dim_; }
    const std::vector<double>& flat() const { return flat_; }
    std::span<const double> entry(std::size_t i) const {
        return {flat_.data() + i * dim_, dim_};
    }

    void validate_distinct() const {
        std::vector<std::size_t> order(size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        auto cmp = [&](std::size_t a, std::size_t b) {
            return std::lexicographical_compare(
                entry(a).begin(), entry(a).end(), entry(b).begin(),
                entry(b).end());
        };
        std::sort(order.begin(), order.end(), cmp);
        for (std::size_t i = 1; i < order.size(); ++i)
            require(cmp(order[i - 1], order[i]),
                    "Codebook: duplicate entries");
    }

  private:
    std::size_t dim_;
    std::vector<double> flat_;
};

struct QuantizeResult {
    std::vector<std::uint32_t> indices;  // one per grid position
    Tensor z_q;                          // selected entries, shape of z
    double quant_error = 0.0;            // mean squared vector distance
};

/// Snaps every latent vector (the leading axis of `z` is the vector
/// dimension) to its nearest codebook entry by squared Euclidean distance;
/// ties break to the lowest index.
inline QuantizeResult quantize(const Tensor& z, const Codebook& book,
                               unsigned threads = 0) {
    require(!z.shape.empty() && z.shape.front() == book.dim(),
            "quantize: leading tensor axis must equal the codebook dimension");
    const std::size_t dim = book.dim();
    const std::size_t cells = z.size() / dim;
    require(cells >= 1, "quantize: empty latent grid");

    QuantizeResult result;
    result.indices.assign(cells, 0);
    result.z_q = Tensor::zeros(z.shape);
    std::vector<double> cell_err(cells, 0.0);

    parallel_for(cells, threads, [&](std::size_t i) {
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_idx = 0;
        for (std::size_t e = 0; e < book.size(); ++e) {
            const auto entry = book.entry(e);
            double d2 = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                const double d = z.v[c * cells + i] - entry[c];
                d2 += d * d;
            }
            if (d2 < best) {
                best = d2;
                best_idx = static_cast<std::uint32_t>(e);
            }
        }
        result.indices[i] = best_idx;
        cell_err[i] = best;
        const auto entry = book.entry(best_idx);
        for (std::size_t c = 0; c < dim; ++c)
            result.z_q.v[c * cells + i] = entry[c];
    });

    double sum = 0.0;
    for (double e : cell_err) sum += e;
    result.quant_error = sum / static_cast<double>(cells);
    return result;
}

// ---------------------------------------------------------------------------
// VQGAN loss formulas
// ---------------------------------------------------------------------------

/// Reconstruction + codebook + commitment objective. The stop-gradient in
/// the usual formulation only affects differentiation; for evaluation both
/// latent terms reduce to the squared distance between z_e and z_q.
inline double vqvae_loss(const Tensor& x, const Tensor& x_hat,
                         const Tensor& z_e, const Tensor& z_q,
                         double commit_weight) {
    require_same_shape(x, x_hat, "vqvae_loss");
    require_same_shape(z_e, z_q, "vqvae_loss");
    require(commit_weight >= 0.0, "vqvae_loss: commit weight must be >= 0");
    const double latent_gap = mse(z_e, z_q);
    return mse(x, x_hat) + latent_gap + commit_weight * latent_gap;
}

/// Hinge adversarial objective over discriminator score grids:
/// mean(max(0, 1 - d_real)) + mean(max(0, 1 + d_fake)).
inline double hinge_disc_loss(std::span<const double> d_real,
                              std::span<const double> d_fake) {
    require(!d_real.empty() && !d_fake.empty(),
            "hinge_disc_loss: empty score grid");
    double real = 0.0;
    for (double v : d_real) real += std::max(0.0, 1.0 - v);
    double fake = 0.0;
    for (double v : d_fake) fake += std::max(0.0, 1.0 + v);
    return real / static_cast<double>(d_real.size()) +
           fake / static_cast<double>(d_fake.size());
}

/// 2D slice discriminator objective: the hinge loss over scores of the real
/// and reconstructed axial slice at index s.
inline double slice_disc_loss(
    const Volume3D& y, const Volume3D& y_hat, std::size_t s,
    const std::function<Image2D(const Image2D&)>& d2) {
    require(y.dim() == y_hat.dim(), "slice_disc_loss: volume shape mismatch");
    require(s < y.dim().d, "slice_disc_loss: axial index out of range");
    const Image2D real = d2(slice_volume(y, SlicePlane::Axial, s));
    const Image2D fake = d2(slice_volume(y_hat, SlicePlane::Axial, s));
    return hinge_disc_loss(real.data, fake.data);
}

/// Feature-space distance between two slice stacks: mean squared difference
/// of extracted features, averaged over slices. The fixed band-pass
/// extractor stands in for a pretrained perceptual network.
inline double perceptual_loss(const std::vector<Image2D>& a,
                              const std::vector<Image2D>& b,
                              const FeatureExtractor& feat) {
    require(!a.empty() && a.size() == b.size(),
            "perceptual_loss: slice stacks must be nonempty and equal length");
    double total = 0.0;
    for (std::size_t s = 0; s < a.size(); ++s) {
        require(a[s].rows == b[s].rows && a[s].cols == b[s].cols,
                "perceptual_loss: slice shape mismatch");
        const FeatureImage fa = feat.extract(a[s]);
        const FeatureImage fb = feat.extract(b[s]);
        double acc = 0.0;
        for (std::size_t i = 0; i < fa.data.size(); ++i) {
            const double d = fa.data[i] - fb.data[i];
            acc += d * d;
        }
        total += acc / static_cast<double>(fa.data.size());
    }
    return total / static_cast<double>(a.size());
}

struct Objectives {
    double disc = 0.0;  // L_D
    double gen = 0.0;   // L_G
};

/// L_D = l1 * (loss_d3 + loss_d2); L_G = l2 * loss_vqvae + l3 * loss_p.
inline Objectives weighted_objectives(double loss_d3, double loss_d2,
                                      double loss_vqvae, double loss_p,
                                      double l1, double l2, double l3) {
    require(l1 >= 0 && l2 >= 0 && l3 >= 0,
            "weighted_objectives: weights must be nonnegative");
    return {l1 * (loss_d3 + loss_d2), l2 * loss_vqvae + l3 * loss_p};
}

// ---------------------------------------------------------------------------
// Autoencoder pair
// ---------------------------------------------------------------------------

/// Encoder/decoder pair mapping a (n, n, n) volume to a (channels, n/f,
/// n/f, n/f) latent grid and back. Implementations are deterministic with
/// fixed shapes.
class AutoencoderPair {
  public:
    virtual ~AutoencoderPair() = default;
    virtual std::size_t latent_channels() const = 0;
    virtual std::size_t compression() const = 0;
    virtual Tensor encode(const Volume3D& v) const = 0;
    virtual Volume3D decode(const Tensor& z) const = 0;
};

/// Fixed (non-learned) pair: the encoder average-pools by the compression
/// factor and lifts each pooled scalar through a constant unit-norm channel
/// vector; the decoder projects back through the same vector and trilinearly
/// upsamples. decode(encode(v)) therefore equals pool-then-upsample of v.
class PoolingAutoencoder final : public AutoencoderPair {
  public:
    PoolingAutoencoder(Dim3 volume_dim, Vec3 spacing, Vec3 origin,
                       VolumeUnit unit, std::size_t factor = 2,
                       std::size_t channels = 8)
        : dim_(volume_dim), spacing_(spacing), origin_(origin), unit_(unit),
          factor_(factor), channels_(channels) {
        require(factor_ >= 1, "PoolingAutoencoder: factor must be >= 1");
        require(channels_ >= 1 && channels_ <= 8,
                "PoolingAutoencoder: channels must be in [1, 8]");
        require(dim_.d % factor_ == 0 && dim_.h % factor_ == 0 &&
                    dim_.w % factor_ == 0,
                "PoolingAutoencoder: dims must be divisible by the factor");
        double norm2 = 0.0;
        for (std::size_t c = 0; c < channels_; ++c)
            norm2 += kLiftPattern[c] * kLiftPattern[c];
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t c = 0; c < channels_; ++c)
            lift_[c] = kLiftPattern[c] * inv;
    }

    /// Convenience for the pipeline's normalized cube volumes.
    static PoolingAutoencoder for_cube(std::size_t n, double spacing_mm,
                                       std::size_t factor = 2,
                                       std::size_t channels = 8) {
        const Dim3 dim{n, n, n};
        const Vec3 sp{spacing_mm, spacing_mm, spacing_mm};
        return PoolingAutoencoder(dim, sp, Volume3D::centered_origin(dim, sp),
                                  VolumeUnit::Normalized, factor, channels);
    }

    std::size_t latent_channels() const override { return channels_; }
    std::size_t compression() const override { return factor_; }
    double lift(std::size_t c) const { return lift_[c]; }

    std::vector<std::size_t> latent_shape() const {
        return {channels_, dim_.d / factor_, dim_.h / factor_,
                dim_.w / factor_};
    }

    Tensor encode(const Volume3D& v) const override {
        require(v.dim() == dim_, "PoolingAutoencoder: unexpected volume shape");
        const std::size_t m_d = dim_.d / factor_;
        const std::size_t m_h = dim_.h / factor_;
        const std::size_t m_w = dim_.w / factor_;
        const std::size_t cells = m_d * m_h * m_w;
        const double inv_count =
            1.0 / static_cast<double>(factor_ * factor_ * factor_);

        Tensor z = Tensor::zeros(latent_shape());
        for (std::size_t z0 = 0; z0 < m_d; ++z0)
            for (std::size_t y0 = 0; y0 < m_h; ++y0)
                for (std::size_t x0 = 0; x0 < m_w; ++x0) {
                    double pooled = 0.0;
                    for (std::size_t dz = 0; dz < factor_; ++dz)
                        for (std::size_t dy = 0; dy < factor_; ++dy)
                            for (std::size_t dx = 0; dx < factor_; ++dx)
                                pooled += v.at(z0 * factor_ + dz,
                                               y0 * factor_ + dy,
                                               x0 * factor_ + dx);
                    pooled *= inv_count;
                    const std::size_t i = (z0 * m_h + y0) * m_w + x0;
                    for (std::size_t c = 0; c < channels_; ++c)
                        z.v[c * cells + i] = lift_[c] * pooled;
                }
        return z;
    }

    Volume3D decode(const Tensor& z) const override {
        require(z.shape == latent_shape(),
                "PoolingAutoencoder: unexpected latent shape");
        const std::size_t m_d = dim_.d / factor_;
        const std::size_t m_h = dim_.h / factor_;
        const std::size_t m_w = dim_.w / factor_;
        const std::size_t cells = m_d * m_h * m_w;

        // Project channels back to one scalar per latent cell.
        std::vector<double> coarse(cells, 0.0);
        for (std::size_t c = 0; c < channels_; ++c)
            for (std::size_t i = 0; i < cells; ++i)
                coarse[i] += lift_[c] * z.v[c * cells + i];

        const Vec3 csp{spacing_.x * double(factor_), spacing_.y * double(factor_),
                       spacing_.z * double(factor_)};
        Volume3D coarse_vol(Dim3{m_d, m_h, m_w}, csp, Vec3{}, VolumeUnit::HU,
                            std::move(coarse));

        const double scale = 1.0 / static_cast<double>(factor_);
        std::vector<double> fine(dim_.count());
        const bool clamp01 = unit_ == VolumeUnit::Normalized;
        for (std::size_t zz = 0; zz < dim_.d; ++zz)
            for (std::size_t yy = 0; yy < dim_.h; ++yy)
                for (std::size_t xx = 0; xx < dim_.w; ++xx) {
                    const double ix = (double(xx) + 0.5) * scale - 0.5;
                    const double iy = (double(yy) + 0.5) * scale - 0.5;
                    const double iz = (double(zz) + 0.5) * scale - 0.5;
                    double val = sample_trilinear(coarse_vol, ix, iy, iz);
                    if (clamp01) val = std::clamp(val, 0.0, 1.0);
                    fine[(zz * dim_.h + yy) * dim_.w + xx] = val;
                }
        return Volume3D(dim_, spacing_, origin_, unit_, std::move(fine));
    }

  private:
    static constexpr std::array<double, 8> kLiftPattern = {
        0.60, -0.50, 0.40, -0.30, 0.25, -0.20, 0.15, 0.10};

    Dim3 dim_;
    Vec3 spacing_;
    Vec3 origin_;
    VolumeUnit unit_;
    std::size_t factor_;
    std::size_t channels_;
    std::array<double, 8> lift_{};
};

}  // namespace sparsect
