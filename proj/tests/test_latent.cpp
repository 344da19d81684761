// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "sparsect/latent.hpp"
#include "sparsect/metrics.hpp"
#include "support/oracles.hpp"

using namespace sparsect;

namespace {

Tensor random_latent(std::size_t dim, std::size_t cells, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Tensor t = Tensor::zeros({dim, cells});
    for (double& x : t.v) x = g(rng);
    return t;
}

Volume3D smooth_lung_128() {
    const Phantom lung = load_phantom_file(std::string(SPARSECT_DATA_DIR) +
                                           "/phantoms/lung.txt");
    const Volume3D coarse = make_phantom(lung, 32, 4.0);
    const Volume3D fine = crop_resize_cube(coarse, 128);
    return Volume3D(fine.dim(), fine.spacing(), fine.origin(),
                    VolumeUnit::Normalized, std::vector<double>(fine.data()));
}

}  // namespace

TEST_SUITE("latent") {

TEST_CASE("quantize snaps to nearest codebook entries") {
    SUBCASE("a vector equal to an entry maps to it with zero error") {
        const Codebook book = Codebook::random(32, 4, 1);
        Tensor z = Tensor::zeros({4, 1});
        for (std::size_t c = 0; c < 4; ++c) z.v[c] = book.entry(17)[c];
        const QuantizeResult q = quantize(z, book);
        CHECK(q.indices[0] == 17);
        CHECK(q.quant_error == 0.0);
        CHECK(q.z_q.v == z.v);
    }

    SUBCASE("a one-entry codebook maps everything onto that entry") {
        const Codebook book(2, {0.5, -0.25});
        const Tensor z = random_latent(2, 50, 2);
        const QuantizeResult q = quantize(z, book);
        for (std::size_t i = 0; i < 50; ++i) {
            CHECK(q.indices[i] == 0);
            CHECK(q.z_q.v[i] == 0.5);
            CHECK(q.z_q.v[50 + i] == -0.25);
        }
    }

    SUBCASE("indices match an exhaustive nearest-neighbor scan") {
        const Codebook book = Codebook::random(512, 8, 3);
        const std::size_t cells = 2000;
        const Tensor z = random_latent(8, cells, 4);
        const QuantizeResult q = quantize(z, book);

        double err_sum = 0.0;
        for (std::size_t i = 0; i < cells; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::uint32_t best_idx = 0;
            for (std::size_t e = 0; e < book.size(); ++e) {
                double d2 = 0.0;
                for (std::size_t c = 0; c < 8; ++c) {
                    const double d = z.v[c * cells + i] - book.entry(e)[c];
                    d2 += d * d;
                }
                if (d2 < best) {
                    best = d2;
                    best_idx = std::uint32_t(e);
                }
            }
            CHECK(q.indices[i] == best_idx);
            err_sum += best;
        }
        CHECK(q.quant_error ==
              doctest::Approx(err_sum / double(cells)).epsilon(1e-12));
    }

    SUBCASE("quantization never increases the distance to any entry") {
        const Codebook book = Codebook::random(16, 3, 5);
        const std::size_t cells = 64;
        const Tensor z = random_latent(3, cells, 6);
        const QuantizeResult q = quantize(z, book);
        for (std::size_t i = 0; i < cells; ++i) {
            double chosen = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double d = z.v[c * cells + i] - q.z_q.v[c * cells + i];
                chosen += d * d;
            }
            for (std::size_t e = 0; e < book.size(); ++e) {
                double d2 = 0.0;
                for (std::size_t c = 0; c < 3; ++c) {
                    const double d = z.v[c * cells + i] - book.entry(e)[c];
                    d2 += d * d;
                }
                CHECK(chosen <= d2 + 1e-15);
            }
        }
    }

    SUBCASE("ties break to the lowest index") {
        Codebook book(1, {2.0, 2.0, 2.0});  // deliberately duplicated entries
        const Tensor z = Tensor::full({1, 3}, 2.0);
        const QuantizeResult q = quantize(z, book);
        for (std::uint32_t idx : q.indices) CHECK(idx == 0);
    }

    SUBCASE("empty codebooks and dimension mismatches are rejected") {
        CHECK_THROWS_AS(Codebook(4, {}), validation_error);
        const Codebook book = Codebook::random(8, 4, 7);
        CHECK_THROWS_AS(quantize(random_latent(3, 5, 8), book),
                        validation_error);
    }
}

TEST_CASE("vqvae_loss combines reconstruction and latent terms") {
    SUBCASE("perfect reconstruction and matched latents cost nothing") {
        const Tensor x = random_latent(2, 20, 9);
        const Tensor z = random_latent(4, 10, 10);
        CHECK(vqvae_loss(x, x, z, z, 0.25) == 0.0);
    }

    SUBCASE("a uniform latent gap costs (1 + commit) * delta^2") {
        const Tensor x = random_latent(2, 20, 11);
        const Tensor z_e = random_latent(4, 10, 12);
        Tensor z_q = z_e;
        const double delta = 0.35;
        for (double& v : z_q.v) v += delta;
        const double commit = 0.6;
        CHECK(vqvae_loss(x, x, z_e, z_q, commit) ==
              doctest::Approx((1.0 + commit) * delta * delta).epsilon(1e-12));
    }

    SUBCASE("the loss is linear in the commitment weight") {
        const Tensor x = random_latent(1, 30, 13);
        const Tensor x_hat = random_latent(1, 30, 14);
        const Tensor z_e = random_latent(4, 10, 15);
        const Tensor z_q = random_latent(4, 10, 16);
        const double l0 = vqvae_loss(x, x_hat, z_e, z_q, 1.0);
        const double l1 = vqvae_loss(x, x_hat, z_e, z_q, 2.0);
        const double l2 = vqvae_loss(x, x_hat, z_e, z_q, 3.0);
        CHECK((l2 - l1) == doctest::Approx(l1 - l0).epsilon(1e-9));
        CHECK((l1 - l0) == doctest::Approx(mse(z_e, z_q)).epsilon(1e-9));
    }
}

TEST_CASE("hinge discriminator losses") {
    SUBCASE("saturated scores cost nothing") {
        const std::vector<double> real{1.0, 2.5, 7.0};
        const std::vector<double> fake{-1.0, -3.0, -1.5};
        CHECK(hinge_disc_loss(real, fake) == 0.0);
    }

    SUBCASE("zero scores cost exactly two") {
        const std::vector<double> zeros(10, 0.0);
        CHECK(hinge_disc_loss(zeros, zeros) == 2.0);
    }

    SUBCASE("random scores match the elementwise formula") {
        std::mt19937 rng(17);
        std::uniform_real_distribution<double> u(-3.0, 3.0);
        std::vector<double> real(33), fake(17);
        for (double& v : real) v = u(rng);
        for (double& v : fake) v = u(rng);
        double want = 0.0;
        for (double v : real) want += std::max(0.0, 1.0 - v) / 33.0;
        for (double v : fake) want += std::max(0.0, 1.0 + v) / 17.0;
        CHECK(hinge_disc_loss(real, fake) ==
              doctest::Approx(want).epsilon(1e-12));
    }

    SUBCASE("loss falls as real scores rise and rises with fake scores") {
        std::vector<double> real{0.2, -0.5};
        const std::vector<double> fake{0.1, 0.4};
        const double base = hinge_disc_loss(real, fake);
        real[0] += 0.25;
        const double after_real = hinge_disc_loss(real, fake);
        CHECK(after_real <= base);
        std::vector<double> fake_up = fake;
        fake_up[1] += 0.25;
        CHECK(hinge_disc_loss(real, fake_up) >= after_real);
    }
}

TEST_CASE("slice_disc_loss scores one axial slice") {
    const Dim3 dim{3, 4, 4};
    const Vec3 sp{1, 1, 1};
    std::vector<double> data(dim.count(), 0.0);
    for (std::size_t i = 0; i < 16; ++i) data[i] = 5.0;  // slice z = 0
    const Volume3D y(dim, sp, Vec3{}, VolumeUnit::HU, std::move(data));

    const auto identity_d2 = [](const Image2D& img) { return img; };

    SUBCASE("equal volumes with zero scores cost two") {
        const Volume3D zeros =
            Volume3D::filled(dim, sp, Vec3{}, VolumeUnit::HU, 0.0);
        CHECK(slice_disc_loss(zeros, zeros, 1, identity_d2) == 2.0);
    }

    SUBCASE("index 0 addresses the first axial slice") {
        // Slice 0 scores 5: h(1-5) = 0 for the real term, h(1+5) = 6 fake.
        CHECK(slice_disc_loss(y, y, 0, identity_d2) == 6.0);
        // Slice 1 scores 0: 1 + 1.
        CHECK(slice_disc_loss(y, y, 1, identity_d2) == 2.0);
    }

    SUBCASE("a constant d2 of one costs two") {
        const auto one_d2 = [](const Image2D& img) {
            return Image2D(img.rows, img.cols, img.pixel_spacing, 1.0);
        };
        CHECK(slice_disc_loss(y, y, 2, one_d2) == 2.0);
    }

    SUBCASE("out-of-range slice indices are rejected") {
        CHECK_THROWS_AS(slice_disc_loss(y, y, 3, identity_d2),
                        validation_error);
    }
}

TEST_CASE("perceptual_loss measures feature-space distance") {
    std::mt19937 rng(18);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Image2D> a;
    for (int s = 0; s < 3; ++s) {
        Image2D img(24, 24, 1.0);
        for (double& v : img.data) v = u(rng);
        a.push_back(img);
    }

    SUBCASE("identical stacks cost nothing") {
        const BandpassExtractor bandpass;
        CHECK(perceptual_loss(a, a, bandpass) == 0.0);
    }

    SUBCASE("the identity extractor collapses to plain MSE") {
        std::vector<Image2D> b = a;
        for (auto& img : b)
            for (double& v : img.data) v = u(rng);
        const IdentityExtractor id;
        double want = 0.0;
        for (std::size_t s = 0; s < a.size(); ++s) {
            double acc = 0.0;
            for (std::size_t i = 0; i < a[s].size(); ++i) {
                const double d = a[s].data[i] - b[s].data[i];
                acc += d * d;
            }
            want += acc / double(a[s].size());
        }
        want /= double(a.size());
        CHECK(perceptual_loss(a, b, id) == doctest::Approx(want).epsilon(1e-12));
    }

    SUBCASE("the band-pass extractor ignores constant offsets") {
        std::vector<Image2D> shifted = a;
        for (auto& img : shifted)
            for (double& v : img.data) v += 0.75;
        const BandpassExtractor bandpass;
        CHECK(perceptual_loss(a, shifted, bandpass) <= 1e-12);
    }

    SUBCASE("mismatched stacks are rejected") {
        std::vector<Image2D> wrong = {Image2D(8, 8, 1.0)};
        const IdentityExtractor id;
        CHECK_THROWS_AS(perceptual_loss(a, wrong, id), validation_error);
    }
}

TEST_CASE("weighted_objectives forms the two training objectives") {
    SUBCASE("all-zero weights zero both objectives") {
        const Objectives o = weighted_objectives(1, 2, 3, 4, 0, 0, 0);
        CHECK(o.disc == 0.0);
        CHECK(o.gen == 0.0);
    }

    SUBCASE("unit discriminator weight sums the adversarial losses") {
        const Objectives o = weighted_objectives(2, 3, 0, 0, 1, 0, 0);
        CHECK(o.disc == 5.0);
    }

    SUBCASE("random weights match the direct weighted sum") {
        std::mt19937 rng(19);
        std::uniform_real_distribution<double> u(0.0, 2.0);
        for (int trial = 0; trial < 50; ++trial) {
            const double d3 = u(rng), d2 = u(rng), vq = u(rng), p = u(rng);
            const double l1 = u(rng), l2 = u(rng), l3 = u(rng);
            const Objectives o = weighted_objectives(d3, d2, vq, p, l1, l2, l3);
            CHECK(std::abs(o.disc - l1 * (d3 + d2)) <= 1e-12);
            CHECK(std::abs(o.gen - (l2 * vq + l3 * p)) <= 1e-12);
        }
    }

    SUBCASE("negative weights are rejected") {
        CHECK_THROWS_AS(weighted_objectives(1, 1, 1, 1, -1, 0, 0),
                        validation_error);
    }
}

TEST_CASE("codebook validation flags duplicates") {
    const Codebook ok = Codebook::random(4096, 8, 20);
    ok.validate_distinct();
    Codebook dup(2, {1.0, 2.0, 3.0, 4.0, 1.0, 2.0});
    CHECK_THROWS_AS(dup.validate_distinct(), validation_error);
}

TEST_CASE("the pooling autoencoder honors its shape and analytic contracts") {
    SUBCASE("constant volumes reconstruct to the same constant") {
        PoolingAutoencoder pair = PoolingAutoencoder::for_cube(16, 1.0);
        const Dim3 dim{16, 16, 16};
        const Vec3 sp{1, 1, 1};
        const Volume3D v =
            Volume3D::filled(dim, sp, Volume3D::centered_origin(dim, sp),
                             VolumeUnit::Normalized, 0.625);
        const Volume3D back = pair.decode(pair.encode(v));
        for (double x : back.data())
            CHECK(x == doctest::Approx(0.625).epsilon(1e-12));
    }

    SUBCASE("a 128 cube maps to an (8, 64^3) latent and back") {
        PoolingAutoencoder pair = PoolingAutoencoder::for_cube(128, 1.0);
        const Volume3D v = smooth_lung_128();
        const Tensor z = pair.encode(v);
        CHECK(z.shape == std::vector<std::size_t>{8, 64, 64, 64});
        const Volume3D back = pair.decode(z);
        CHECK(back.dim() == Dim3{128, 128, 128});
    }

    SUBCASE("decode(encode(v)) equals pool-then-upsample within 1e-6") {
        PoolingAutoencoder pair = PoolingAutoencoder::for_cube(16, 1.0);
        const Phantom lung = load_phantom_file(std::string(SPARSECT_DATA_DIR) +
                                               "/phantoms/lung.txt");
        const Volume3D raw = make_phantom(lung, 16, 8.0);
        const Volume3D v(raw.dim(), raw.spacing(), raw.origin(),
                         VolumeUnit::Normalized,
                         std::vector<double>(raw.data()));
        const Volume3D got = pair.decode(pair.encode(v));

        // Independent pool + cell-centered trilinear upsample.
        const std::size_t m = 8;
        std::vector<double> pooled(m * m * m, 0.0);
        for (std::size_t z = 0; z < m; ++z)
            for (std::size_t y = 0; y < m; ++y)
                for (std::size_t x = 0; x < m; ++x) {
                    double s = 0.0;
                    for (std::size_t dz = 0; dz < 2; ++dz)
                        for (std::size_t dy = 0; dy < 2; ++dy)
                            for (std::size_t dx = 0; dx < 2; ++dx)
                                s += v.at(2 * z + dz, 2 * y + dy, 2 * x + dx);
                    pooled[(z * m + y) * m + x] = s / 8.0;
                }
        const Volume3D coarse(Dim3{m, m, m}, Vec3{2, 2, 2}, Vec3{},
                              VolumeUnit::HU, std::move(pooled));
        for (std::size_t z = 0; z < 16; ++z)
            for (std::size_t y = 0; y < 16; ++y)
                for (std::size_t x = 0; x < 16; ++x) {
                    const Vec3 world{(double(x) + 0.5) / 2.0 - 0.5,
                                     (double(y) + 0.5) / 2.0 - 0.5,
                                     (double(z) + 0.5) / 2.0 - 0.5};
                    // oracle trilinear works in index coords via spacing 2,
                    // origin 0: index = world; reuse world as index lookup.
                    const double want = oracles::trilinear(
                        coarse, Vec3{world.x * 2.0, world.y * 2.0,
                                     world.z * 2.0});
                    CHECK(std::abs(got.at(z, y, x) - want) <= 1e-6);
                }
    }

    SUBCASE("the smooth phantom round-trip clears 35 dB PSNR") {
        PoolingAutoencoder pair = PoolingAutoencoder::for_cube(128, 1.0);
        const Volume3D v = smooth_lung_128();
        const Volume3D back = pair.decode(pair.encode(v));
        CHECK(psnr(v, back, 1.0) >= 35.0);
    }

    SUBCASE("shape violations are rejected") {
        PoolingAutoencoder pair = PoolingAutoencoder::for_cube(16, 1.0);
        const Dim3 dim{8, 8, 8};
        const Vec3 sp{1, 1, 1};
        const Volume3D wrong =
            Volume3D::filled(dim, sp, Vec3{}, VolumeUnit::Normalized, 0.0);
        CHECK_THROWS_AS(pair.encode(wrong), validation_error);
        CHECK_THROWS_AS(pair.decode(Tensor::zeros({8, 4, 4, 4})),
                        validation_error);
        CHECK_THROWS_AS(PoolingAutoencoder::for_cube(15, 1.0, 2),
                        validation_error);
    }
}

}  // TEST_SUITE
