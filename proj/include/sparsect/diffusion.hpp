// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "sparsect/common.hpp"
#include "sparsect/tensor.hpp"

namespace sparsect {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

/// Variance schedule tables for T steps. Timesteps are 1-based; index 0 holds
/// the conventions beta[0] = 0, alpha[0] = 1, alpha_bar[0] = 1.
struct NoiseSchedule {
    int timesteps = 0;
    std::vector<double> beta;       // beta[t], t in [1, T]
    std::vector<double> alpha;      // 1 - beta[t]
    std::vector<double> alpha_bar;  // prod_{s<=t} alpha[s]

    void check_t(int t) const {
        require(t >= 1 && t <= timesteps, "schedule: timestep out of range");
    }

    double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar[t]); }
    double sqrt_one_minus_alpha_bar(int t) const {
        return std::sqrt(1.0 - alpha_bar[t]);
    }
    /// Log signal-to-noise half ratio log(sqrt(abar) / sqrt(1-abar)); the
    /// time variable of the fast sampler.
    double lambda(int t) const {
        return 0.5 * (std::log(alpha_bar[t]) - std::log1p(-alpha_bar[t]));
    }
};

/// Linear beta schedule, endpoints inclusive. Defaults follow the common
/// (1e-4, 0.02) range.
inline NoiseSchedule linear_schedule(int timesteps, double beta_start = 1e-4,
                                     double beta_end = 0.02) {
    require(timesteps >= 1, "linear_schedule: T must be >= 1");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
            "linear_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.timesteps = timesteps;
    s.beta.assign(timesteps + 1, 0.0);
    s.alpha.assign(timesteps + 1, 1.0);
    s.alpha_bar.assign(timesteps + 1, 1.0);
    for (int t = 1; t <= timesteps; ++t) {
        const double frac =
            timesteps == 1 ? 0.0
                           : static_cast<double>(t - 1) / (timesteps - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

// ---------------------------------------------------------------------------
// Latent codes and denoisers
// ---------------------------------------------------------------------------

/// A latent-space sample tagged with its diffusion timestep (t = 0 is clean).
struct LatentCode {
    Tensor data;
    int t = 0;
};

/// Noise-prediction interface: estimates the eps that produced x_t. The
/// condition tensor may be the all-zero sentinel, which implementations must
/// treat as "no conditioning" (the classifier-free unconditional branch).
class Denoiser {
  public:
    virtual ~Denoiser() = default;
    virtual Tensor predict(const Tensor& x_t, int t,
                           const Tensor& condition) const = 0;
};

/// Adapter for test and toy denoisers expressed as plain callables.
class FunctionDenoiser final : public Denoiser {
  public:
    using Fn = std::function<Tensor(const Tensor&, int, const Tensor&)>;
    explicit FunctionDenoiser(Fn fn) : fn_(std::move(fn)) {}
    Tensor predict(const Tensor& x_t, int t,
                   const Tensor& condition) const override {
        return fn_(x_t, t, condition);
    }

  private:
    Fn fn_;
};

// ---------------------------------------------------------------------------
// Forward / reverse process
// ---------------------------------------------------------------------------

/// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, with caller-provided
/// noise for determinism.
inline LatentCode forward_sample(const Tensor& x0, int t, const Tensor& eps,
                                 const NoiseSchedule& s) {
    s.check_t(t);
    require_same_shape(x0, eps, "forward_sample");
    const double a = s.sqrt_alpha_bar(t);
    const double b = s.sqrt_one_minus_alpha_bar(t);
    Tensor out = x0;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.v[i] = a * x0.v[i] + b * eps.v[i];
    return {std::move(out), t};
}

/// One ancestral reverse transition x_t -> x_{t-1}. The mean is the standard
/// eps-parameterized posterior mean; the added noise has the fixed variance
/// sigma_t^2 = beta_t. At t = 1 the mean is returned and `noise` is ignored.
inline LatentCode reverse_step(const Tensor& x_t, int t,
                               const Tensor& eps_pred, const NoiseSchedule& s,
                               const Tensor& noise) {
    s.check_t(t);
    require_same_shape(x_t, eps_pred, "reverse_step");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[t]);
    const double coeff = (1.0 - s.alpha[t]) / s.sqrt_one_minus_alpha_bar(t);
    Tensor out = x_t;
    if (t == 1) {
        for (std::size_t i = 0; i < out.size(); ++i)
            out.v[i] = inv_sqrt_alpha * (x_t.v[i] - coeff * eps_pred.v[i]);
    } else {
        require_same_shape(x_t, noise, "reverse_step");
        const double sigma = std::sqrt(s.beta[t]);
        for (std::size_t i = 0; i < out.size(); ++i)
            out.v[i] = inv_sqrt_alpha * (x_t.v[i] - coeff * eps_pred.v[i]) +
                       sigma * noise.v[i];
    }
    return {std::move(out), t - 1};
}

/// Classifier-free guidance: (1 + w) * eps_cond - w * eps_uncond, evaluated
/// as eps_cond + w * (eps_cond - eps_uncond) so the w = 0 and
/// eps_cond == eps_uncond identities hold exactly in floating point.
inline Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond,
                          double w) {
    require_same_shape(eps_cond, eps_uncond, "cfg_combine");
    Tensor out = eps_cond;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.v[i] = eps_cond.v[i] + w * (eps_cond.v[i] - eps_uncond.v[i]);
    return out;
}

/// Training objective at one timestep: || eps - eps_theta(x_t, t, c) ||^2
/// averaged over elements.
inline double denoise_loss(const Tensor& x0, int t, const Tensor& eps,
                           const Denoiser& denoiser, const Tensor& condition,
                           const NoiseSchedule& s) {
    const LatentCode x_t = forward_sample(x0, t, eps, s);
    const Tensor pred = denoiser.predict(x_t.data, t, condition);
    return mse(eps, pred);
}

/// With probability p returns the all-zero sentinel (conditioning removed),
/// otherwise the condition unchanged. `trial` indexes independent draws.
inline Tensor condition_dropout(const Tensor& condition, double p,
                                std::uint64_t seed, std::uint64_t trial = 0) {
    require(p >= 0.0 && p <= 1.0, "condition_dropout: p must be in [0,1]");
    const CounterRng rng(CounterRng::derive(seed, 0x647270ULL));
    if (rng.uniform(trial) < p) return Tensor::zeros(condition.shape);
    return condition;
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

namespace detail {

/// Guided noise prediction; skips the unconditional branch when w == 0 so a
/// zero-guidance run is identical to plain conditional sampling.
inline Tensor guided_eps(const Denoiser& d, const Tensor& x, int t,
                         const Tensor& condition, double w) {
    Tensor eps_cond = d.predict(x, t, condition);
    if (w == 0.0) return eps_cond;
    const Tensor eps_uncond =
        d.predict(x, t, Tensor::zeros(condition.shape));
    return cfg_combine(eps_cond, eps_uncond, w);
}

inline Tensor predict_x0(const Tensor& x, const Tensor& eps,
                         const NoiseSchedule& s, int t) {
    const double a = s.sqrt_alpha_bar(t);
    const double b = s.sqrt_one_minus_alpha_bar(t);
    Tensor x0 = x;
    for (std::size_t i = 0; i < x0.size(); ++i)
        x0.v[i] = (x.v[i] - b * eps.v[i]) / a;
    return x0;
}

}  // namespace detail

/// Optional per-step trajectory hook: called with each intermediate state
/// (including the final one) and its timestep tag.
using TrajectoryObserver = std::function<void(const LatentCode&)>;

/// Stochastic ancestral sampler: draws x_T from the seed, then applies
/// reverse_step with CFG-guided noise predictions for t = T..1. Bit-identical
/// for a fixed seed.
inline LatentCode sample_ancestral(const Denoiser& denoiser,
                                   const Tensor& condition,
                                   const NoiseSchedule& s,
                                   std::vector<std::size_t> shape, double w,
                                   std::uint64_t seed,
                                   const TrajectoryObserver& observe = {}) {
    require(s.timesteps >= 1, "sample_ancestral: invalid schedule");
    LatentCode x{gaussian_field(shape, seed, 0), s.timesteps};
    if (observe) observe(x);
    for (int t = s.timesteps; t >= 1; --t) {
        const Tensor eps = detail::guided_eps(denoiser, x.data, t, condition, w);
        const Tensor noise =
            t > 1 ? gaussian_field(shape, seed, static_cast<std::uint64_t>(t))
                  : Tensor{};
        x = reverse_step(x.data, t, eps, s, noise);
        if (observe) observe(x);
    }
    return x;
}

/// Deterministic fast sampler: a multistep solver in the log signal-to-noise
/// variable with data prediction (x0-parameterization), run over a uniform
/// sub-schedule of `steps` steps. `order` 2 applies the second-order
/// multistep correction; 1 reduces to the exponential-integrator first-order
/// update. The seed fixes only the initial x_T.
inline LatentCode sample_fast(const Denoiser& denoiser, const Tensor& condition,
                              const NoiseSchedule& s,
                              std::vector<std::size_t> shape, double w,
                              int steps, std::uint64_t seed, int order = 2,
                              const TrajectoryObserver& observe = {}) {
    require(steps >= 1 && steps <= s.timesteps,
            "sample_fast: steps must be in [1, T]");
    require(order == 1 || order == 2, "sample_fast: order must be 1 or 2");

    // Sub-schedule T = t_0 > ... > t_{steps-1} = 1 spaced uniformly in the
    // solver's time variable lambda, then the t = 0 readout. `steps` counts
    // denoiser evaluations; equal lambda intervals keep the second-order
    // correction well conditioned.
    std::vector<int> ts(steps + 1);
    ts[steps] = 0;
    ts[0] = s.timesteps;
    if (steps > 1) {
        const double lam_lo = s.lambda(s.timesteps);
        const double lam_hi = s.lambda(1);
        for (int i = 1; i < steps; ++i) {
            const double target =
                lam_lo + (lam_hi - lam_lo) * static_cast<double>(i) /
                             static_cast<double>(steps - 1);
            // lambda(t) decreases in t; binary search the nearest table entry.
            int lo = 1, hi = s.timesteps;
            while (lo < hi) {
                const int mid = (lo + hi) / 2;
                if (s.lambda(mid) >= target)
                    lo = mid + 1;
                else
                    hi = mid;
            }
            int t = std::max(1, lo - 1);
            if (lo <= s.timesteps &&
                std::abs(s.lambda(lo) - target) < std::abs(s.lambda(t) - target))
                t = lo;
            ts[i] = t;
        }
        ts[steps - 1] = 1;
        // Strictly decreasing and feasible: slot i must leave room for the
        // steps-1-i slots after it, so steps <= T always yields a schedule.
        for (int i = 1; i < steps; ++i)
            ts[i] = std::max(std::min(ts[i], ts[i - 1] - 1), steps - i);
    }

    Tensor x = gaussian_field(shape, seed, 0);
    if (observe) observe({x, s.timesteps});
    Tensor prev_x0;
    double prev_h = 0.0;
    for (int i = 1; i <= steps; ++i) {
        const int t_cur = ts[i - 1];
        const int t_next = ts[i];
        const Tensor eps = detail::guided_eps(denoiser, x, t_cur, condition, w);
        Tensor x0 = detail::predict_x0(x, eps, s, t_cur);

        if (t_next == 0) {
            // sigma -> 0 limit: the update lands exactly on the data estimate.
            x = std::move(x0);
            if (observe) observe({x, 0});
            break;
        }

        const double h = s.lambda(t_next) - s.lambda(t_cur);
        const double sigma_ratio =
            s.sqrt_one_minus_alpha_bar(t_next) / s.sqrt_one_minus_alpha_bar(t_cur);
        const double gain = s.sqrt_alpha_bar(t_next) * (1.0 - std::exp(-h));

        Tensor target = x0;
        if (order == 2 && prev_x0.size() == x0.size() && prev_h != 0.0) {
            const double r = prev_h / h;
            const double c = 1.0 / (2.0 * r);
            for (std::size_t j = 0; j < target.size(); ++j)
                target.v[j] = (1.0 + c) * x0.v[j] - c * prev_x0.v[j];
        }
        for (std::size_t j = 0; j < x.size(); ++j)
            x.v[j] = sigma_ratio * x.v[j] + gain * target.v[j];
        if (observe) observe({x, t_next});

        prev_x0 = std::move(x0);
        prev_h = h;
    }
    return {std::move(x), 0};
}

// ---------------------------------------------------------------------------
// Analytic verification denoiser
// ---------------------------------------------------------------------------

/// Closed-form optimal denoiser for x0 ~ N(data_mean, data_var * I):
/// E[x0 | x_t] = (sqrt(abar_t) * v * x_t + (1 - abar_t) * m) /
///               (abar_t * v + 1 - abar_t),
/// returned in eps-parameterization. Ignores the condition tensor.
class AnalyticGaussianDenoiser final : public Denoiser {
  public:
    AnalyticGaussianDenoiser(const NoiseSchedule& s, double data_mean,
                             double data_var)
        : schedule_(&s), mean_scalar_(data_mean), data_var_(data_var) {
        require(data_var > 0.0,
                "AnalyticGaussianDenoiser: data variance must be > 0");
    }

    /// Per-element prior mean (e.g. derived from a conditioning volume).
    AnalyticGaussianDenoiser(const NoiseSchedule& s, Tensor data_mean,
                             double data_var)
        : schedule_(&s), mean_field_(std::move(data_mean)),
          data_var_(data_var) {
        require(data_var > 0.0,
                "AnalyticGaussianDenoiser: data variance must be > 0");
    }

    Tensor posterior_mean(const Tensor& x_t, int t) const {
        const NoiseSchedule& s = *schedule_;
        s.check_t(t);
        const double abar = s.alpha_bar[t];
        const double denom = abar * data_var_ + (1.0 - abar);
        const double cx = s.sqrt_alpha_bar(t) * data_var_ / denom;
        const double cm = (1.0 - abar) / denom;
        Tensor out = x_t;
        for (std::size_t i = 0; i < out.size(); ++i)
            out.v[i] = cx * x_t.v[i] + cm * prior_mean(i);
        return out;
    }

    Tensor predict(const Tensor& x_t, int t,
                   const Tensor& /*condition*/) const override {
        const NoiseSchedule& s = *schedule_;
        const Tensor e_x0 = posterior_mean(x_t, t);
        const double a = s.sqrt_alpha_bar(t);
        const double b = s.sqrt_one_minus_alpha_bar(t);
        Tensor eps = x_t;
        for (std::size_t i = 0; i < eps.size(); ++i)
            eps.v[i] = (x_t.v[i] - a * e_x0.v[i]) / b;
        return eps;
    }

  private:
    double prior_mean(std::size_t i) const {
        return mean_field_.size() ? mean_field_.v[i] : mean_scalar_;
    }

    const NoiseSchedule* schedule_;
    Tensor mean_field_;
    double mean_scalar_ = 0.0;
    double data_var_;
};

}  // namespace sparsect
