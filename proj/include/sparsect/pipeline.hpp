// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparsect/common.hpp"
#include "sparsect/diffusion.hpp"
#include "sparsect/fusion.hpp"
#include "sparsect/io.hpp"
#include "sparsect/latent.hpp"
#include "sparsect/metrics.hpp"
#include "sparsect/projector.hpp"
#include "sparsect/uncertainty.hpp"
#include "sparsect/volume.hpp"

namespace sparsect {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset conventions
// ---------------------------------------------------------------------------

/// HU clipping window and metric peak value per dataset convention. The
/// thoracic peak follows the [-1024, 3071] twelve-bit range (width 4095).
struct DatasetConvention {
    double clip_lo = 0.0;
    double clip_hi = 1.0;
    double i_max = 1.0;
};

inline DatasetConvention dataset_convention(const std::string& name) {
    if (name == "lidc") return {0.0, 2500.0, 4095.0};
    if (name == "thoracic") return {-1000.0, 1000.0, 4095.0};
    if (name == "phantom") return {0.0, 1.0, 1.0};
    throw validation_error("unknown dataset convention: " + name);
}

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

/// Everything a command needs, loadable from a JSON config file. Flags
/// override individual keys; validation happens before any computation.
struct PipelineConfig {
    // geometry block (angle_deg of `geometry` is ignored; angles_deg drives)
    ProjectionGeometry geometry = [] {
        ProjectionGeometry g;
        g.detector_rows = 128;
        g.detector_cols = 128;
        g.detector_spacing = 1.5;
        return g;
    }();
    std::vector<double> angles_deg = default_view_angles();

    // schedule block
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string sampler = "fast";
    int sampler_steps = 10;
    double guidance = 1.0;
    double dropout = 0.1;

    // latent block
    fs::path codebook_path;
    std::size_t compression = 2;
    std::size_t latent_channels = 8;

    // run block
    std::uint64_t seed = 1234;
    std::size_t mc_samples = 100;
    std::vector<std::uint64_t> mc_seeds;
    fs::path output_dir;
    std::string dataset = "phantom";
    unsigned threads = 0;
    std::size_t volume_size = 128;
    double voxel_spacing = 1.0;
    std::string extractor = "identity";

    // metrics block
    double prescription_gy = 50.0;
    double v_percent = 90.0;
    double v_gray_threshold = 20.0;
    std::map<std::string, std::string> metric_bands;

    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig load(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw validation_error("cannot open config: " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw validation_error("config parse error: " +
                                   std::string(e.what()));
        }
        return from_json(j);
    }

    void validate() const {
        geometry.validate();
        require(!angles_deg.empty(), "config: angle list must be nonempty");
        require(timesteps >= 1, "config: timesteps must be >= 1");
        require(beta_start > 0 && beta_start <= beta_end && beta_end < 1,
                "config: need 0 < beta_start <= beta_end < 1");
        require(sampler == "fast" || sampler == "ancestral",
                "config: sampler must be 'fast' or 'ancestral'");
        require(sampler_steps >= 1 && sampler_steps <= timesteps,
                "config: sampler steps must be in [1, timesteps]");
        require(dropout >= 0.0 && dropout <= 1.0,
                "config: dropout must be in [0, 1]");
        require(compression >= 1, "config: compression must be >= 1");
        require(latent_channels >= 1 && latent_channels <= 8,
                "config: latent channels must be in [1, 8]");
        require(volume_size >= 1 && volume_size % compression == 0,
                "config: volume size must be a positive multiple of the "
                "compression factor");
        require(voxel_spacing > 0, "config: voxel spacing must be > 0");
        require(extractor == "identity" || extractor == "bandpass",
                "config: extractor must be 'identity' or 'bandpass'");
        require(mc_samples >= 1, "config: mc_samples must be >= 1");
        dataset_convention(dataset);
        if (!mc_seeds.empty()) {
            std::vector<std::uint64_t> sorted = mc_seeds;
            std::sort(sorted.begin(), sorted.end());
            require(std::adjacent_find(sorted.begin(), sorted.end()) ==
                        sorted.end(),
                    "config: mc seeds must be distinct");
        }
        if (!codebook_path.empty())
            require(fs::exists(codebook_path),
                    "config: codebook file does not exist: " +
                        codebook_path.string());
    }

    NoiseSchedule schedule() const {
        return linear_schedule(timesteps, beta_start, beta_end);
    }

    std::unique_ptr<FeatureExtractor> make_extractor() const {
        if (extractor == "bandpass")
            return std::make_unique<BandpassExtractor>();
        return std::make_unique<IdentityExtractor>();
    }

    std::size_t latent_size() const { return volume_size / compression; }

    GridSpec latent_grid() const {
        return GridSpec::centered_cube(
            latent_size(), double(volume_size) * voxel_spacing);
    }

    PoolingAutoencoder autoencoder() const {
        return PoolingAutoencoder::for_cube(volume_size, voxel_spacing,
                                            compression, latent_channels);
    }

    DatasetConvention convention() const {
        return dataset_convention(dataset);
    }

    /// Output root: config key, else $SPARSECT_OUT, else the working dir.
    fs::path out_root() const {
        if (!output_dir.empty()) return output_dir;
        if (const char* env = std::getenv("SPARSECT_OUT")) return env;
        return fs::current_path();
    }

    fs::path out(const std::string& name) const {
        const fs::path root = out_root();
        fs::create_directories(root);
        return root / name;
    }
};

inline PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        if (j.contains("geometry")) {
            const auto& g = j.at("geometry");
            if (g.contains("beam"))
                c.geometry.beam = g.at("beam").get<std::string>() == "cone"
                                      ? BeamType::Cone
                                      : BeamType::Parallel;
            if (g.contains("dso")) c.geometry.dso = g.at("dso").get<double>();
            if (g.contains("dsd")) c.geometry.dsd = g.at("dsd").get<double>();
            if (g.contains("detector_rows"))
                c.geometry.detector_rows = g.at("detector_rows").get<std::size_t>();
            if (g.contains("detector_cols"))
                c.geometry.detector_cols = g.at("detector_cols").get<std::size_t>();
            if (g.contains("detector_spacing"))
                c.geometry.detector_spacing =
                    g.at("detector_spacing").get<double>();
            if (g.contains("angles_deg"))
                c.angles_deg = g.at("angles_deg").get<std::vector<double>>();
            if (g.contains("translation")) {
                const auto t = g.at("translation").get<std::vector<double>>();
                require(t.size() == 3, "config: translation needs 3 entries");
                c.geometry.translation = {t[0], t[1], t[2]};
            }
        }
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            if (s.contains("timesteps")) c.timesteps = s.at("timesteps").get<int>();
            if (s.contains("beta_start"))
                c.beta_start = s.at("beta_start").get<double>();
            if (s.contains("beta_end")) c.beta_end = s.at("beta_end").get<double>();
            if (s.contains("sampler"))
                c.sampler = s.at("sampler").get<std::string>();
            if (s.contains("steps")) c.sampler_steps = s.at("steps").get<int>();
            if (s.contains("guidance")) c.guidance = s.at("guidance").get<double>();
            if (s.contains("dropout")) c.dropout = s.at("dropout").get<double>();
        }
        if (j.contains("latent")) {
            const auto& l = j.at("latent");
            if (l.contains("codebook"))
                c.codebook_path = l.at("codebook").get<std::string>();
            if (l.contains("compression"))
                c.compression = l.at("compression").get<std::size_t>();
            if (l.contains("channels"))
                c.latent_channels = l.at("channels").get<std::size_t>();
        }
        if (j.contains("run")) {
            const auto& r = j.at("run");
            if (r.contains("seed")) c.seed = r.at("seed").get<std::uint64_t>();
            if (r.contains("mc_samples"))
                c.mc_samples = r.at("mc_samples").get<std::size_t>();
            if (r.contains("mc_seeds"))
                c.mc_seeds = r.at("mc_seeds").get<std::vector<std::uint64_t>>();
            if (r.contains("output_dir"))
                c.output_dir = r.at("output_dir").get<std::string>();
            if (r.contains("dataset"))
                c.dataset = r.at("dataset").get<std::string>();
            if (r.contains("threads"))
                c.threads = r.at("threads").get<unsigned>();
            if (r.contains("volume_size"))
                c.volume_size = r.at("volume_size").get<std::size_t>();
            if (r.contains("voxel_spacing"))
                c.voxel_spacing = r.at("voxel_spacing").get<double>();
            if (r.contains("extractor"))
                c.extractor = r.at("extractor").get<std::string>();
        }
        if (j.contains("metrics")) {
            const auto& m = j.at("metrics");
            if (m.contains("prescription_gy"))
                c.prescription_gy = m.at("prescription_gy").get<double>();
            if (m.contains("v_percent"))
                c.v_percent = m.at("v_percent").get<double>();
            if (m.contains("v_gray"))
                c.v_gray_threshold = m.at("v_gray").get<double>();
            if (m.contains("bands"))
                for (const auto& [key, val] : m.at("bands").items())
                    c.metric_bands[key] = val.get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("config type error: " + std::string(e.what()));
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Conditioned toy denoiser
// ---------------------------------------------------------------------------

/// Gaussian-prior denoiser whose per-voxel prior mean comes from the fused
/// conditioning volume: its channel mean, rescaled into latent units
/// and lifted through the autoencoder's channel vector. The all-zero
/// condition sentinel collapses it to an unconditional zero-mean prior, so
/// classifier-free guidance behaves as expected.
class ConditionPriorDenoiser final : public Denoiser {
  public:
    ConditionPriorDenoiser(const NoiseSchedule& s,
                           std::vector<double> channel_lift, double data_var,
                           double condition_scale)
        : schedule_(&s), lift_(std::move(channel_lift)), var_(data_var),
          scale_(condition_scale) {
        require(var_ > 0, "ConditionPriorDenoiser: variance must be > 0");
        require(!lift_.empty(), "ConditionPriorDenoiser: empty channel lift");
    }

    Tensor predict(const Tensor& x_t, int t,
                   const Tensor& condition) const override {
        const NoiseSchedule& s = *schedule_;
        s.check_t(t);
        require(!x_t.shape.empty() && x_t.shape.front() == lift_.size(),
                "ConditionPriorDenoiser: latent channel mismatch");
        const std::size_t cells = x_t.size() / lift_.size();

        // Per-cell scalar prior from the condition's channel mean.
        std::vector<double> prior(cells, 0.0);
        if (condition.size() > 0 && !condition.is_zero()) {
            require(condition.size() % cells == 0,
                    "ConditionPriorDenoiser: condition grid mismatch");
            const std::size_t cch = condition.size() / cells;
            for (std::size_t ch = 0; ch < cch; ++ch)
                for (std::size_t i = 0; i < cells; ++i)
                    prior[i] += condition.v[ch * cells + i];
            const double norm = scale_ / double(cch);
            for (double& p : prior) p *= norm;
        }

        const double abar = s.alpha_bar[t];
        const double denom = abar * var_ + (1.0 - abar);
        const double cx = s.sqrt_alpha_bar(t) * var_ / denom;
        const double cm = (1.0 - abar) / denom;
        const double a = s.sqrt_alpha_bar(t);
        const double b = s.sqrt_one_minus_alpha_bar(t);

        Tensor eps = x_t;
        for (std::size_t ch = 0; ch < lift_.size(); ++ch)
            for (std::size_t i = 0; i < cells; ++i) {
                const std::size_t k = ch * cells + i;
                const double mean_k = lift_[ch] * prior[i];
                const double e_x0 = cx * x_t.v[k] + cm * mean_k;
                eps.v[k] = (x_t.v[k] - a * e_x0) / b;
            }
        return eps;
    }

  private:
    const NoiseSchedule* schedule_;
    std::vector<double> lift_;
    double var_;
    double scale_;
};

// ---------------------------------------------------------------------------
// Denoiser specs
// ---------------------------------------------------------------------------

/// Parses "gaussian:mean=M,var=V" and "condition:var=V,scale=S|auto".
/// The auto scale maps the condition's peak magnitude to one latent unit.
struct DenoiserSpec {
    std::string kind = "gaussian";
    double mean = 0.25;
    double var = 0.05;
    double scale = 0.0;  // 0 = auto

    static DenoiserSpec parse(const std::string& text) {
        DenoiserSpec spec;
        const auto colon = text.find(':');
        spec.kind = text.substr(0, colon);
        require(spec.kind == "gaussian" || spec.kind == "condition",
                "denoiser spec: kind must be 'gaussian' or 'condition'");
        if (colon == std::string::npos) return spec;
        std::istringstream rest(text.substr(colon + 1));
        std::string item;
        while (std::getline(rest, item, ',')) {
            const auto eq = item.find('=');
            require(eq != std::string::npos,
                    "denoiser spec: expected key=value, got '" + item + "'");
            const std::string key = item.substr(0, eq);
            const std::string val = item.substr(eq + 1);
            if (key == "mean")
                spec.mean = std::stod(val);
            else if (key == "var")
                spec.var = std::stod(val);
            else if (key == "scale")
                spec.scale = val == "auto" ? 0.0 : std::stod(val);
            else
                throw validation_error("denoiser spec: unknown key '" + key +
                                       "'");
        }
        require(spec.var > 0, "denoiser spec: var must be > 0");
        return spec;
    }
};

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

namespace detail {

inline fs::path data_root() {
    if (const char* env = std::getenv("SPARSECT_DATA")) return env;
#ifdef SPARSECT_DATA_DIR
    return SPARSECT_DATA_DIR;
#else
    return fs::current_path() / "data";
#endif
}

/// Clip + normalize an HU volume per the dataset convention; normalized
/// volumes pass through unchanged.
inline Volume3D to_normalized(const Volume3D& v, const DatasetConvention& c) {
    if (v.unit() == VolumeUnit::Normalized) return v;
    return normalize(clip_values(v, c.clip_lo, c.clip_hi), c.clip_lo, c.clip_hi);
}

inline std::vector<XRayView> load_views(const std::vector<fs::path>& files) {
    require(!files.empty(), "need at least one x-ray file");
    std::vector<XRayView> views;
    views.reserve(files.size());
    for (const auto& f : files) views.push_back(read_xray(f));
    return views;
}

}  // namespace detail

/// phantom: renders a named (or file-provided) phantom at n^3 voxels sized to
/// the 128 mm reference field of view, and writes it as VOL1.
inline fs::path run_phantom(const PipelineConfig& config,
                            const std::string& kind, std::size_t n,
                            const std::string& out_name = "") {
    require(n >= 1, "phantom: n must be >= 1");
    Phantom phantom;  // "empty" stays empty
    if (kind == "shepp3d" || kind == "lung") {
        phantom = load_phantom_file(
            (detail::data_root() / "phantoms" / (kind + ".txt")).string());
    } else if (kind != "empty") {
        phantom = load_phantom_file(kind);  // treat as a file path
    }
    const double spacing = 128.0 / double(n);
    const Volume3D vol = make_phantom(phantom, n, spacing, config.threads);
    const std::string name =
        out_name.empty()
            ? "phantom_" + fs::path(kind).stem().string() + "_" +
                  std::to_string(n) + ".vol"
            : out_name;
    const fs::path path = config.out(name);
    write_vol1(path, vol);
    return path;
}

/// drr: renders one DRR per configured angle and writes PGM + sidecar pairs.
inline std::vector<fs::path> run_drr(const PipelineConfig& config,
                                     const fs::path& volume_file) {
    config.validate();
    const Volume3D raw = read_vol1(volume_file);
    const Volume3D vol = detail::to_normalized(raw, config.convention());
    const std::string stem = volume_file.stem().string();

    std::vector<fs::path> written;
    for (std::size_t k = 0; k < config.angles_deg.size(); ++k) {
        const ProjectionGeometry g =
            config.geometry.with_angle(config.angles_deg[k]);
        const Image2D img = render_drr(vol, g, 0.0, config.threads);
        char suffix[16];
        std::snprintf(suffix, sizeof(suffix), "_view%03zu.pgm", k);
        const fs::path path = config.out(stem + suffix);
        write_xray(path, img, g);
        written.push_back(path);
    }
    return written;
}

/// fuse: builds the conditioning feature volume from x-rays and writes VOLC.
inline fs::path run_fuse(const PipelineConfig& config,
                         const std::vector<fs::path>& xray_files,
                         const std::string& out_name = "condition.volc") {
    config.validate();
    const auto views = detail::load_views(xray_files);
    const auto extractor = config.make_extractor();
    const FeatureVolume cond =
        build_condition(views, *extractor, config.latent_grid(), config.threads);
    const fs::path path = config.out(out_name);
    write_volc(path, cond);
    return path;
}

namespace detail {

/// Shared sampling core: condition -> latent sample -> (optional VQ) ->
/// decoded volume. Deterministic per seed. When `trajectory_dir` is set,
/// every intermediate latent state is written there as a VOL1 file (the
/// channel projection of the latent, named trajectory_t####.vol).
inline Volume3D reconstruct_volume(const PipelineConfig& config,
                                   const std::vector<XRayView>& views,
                                   const DenoiserSpec& spec,
                                   std::uint64_t seed,
                                   const std::optional<fs::path>&
                                       trajectory_dir = std::nullopt) {
    const auto extractor = config.make_extractor();
    const FeatureVolume cond_vol =
        build_condition(views, *extractor, config.latent_grid(), config.threads);

    const std::size_t m = config.latent_size();
    Tensor condition({cond_vol.channels, m, m, m},
                     std::vector<double>(cond_vol.data));

    const NoiseSchedule schedule = config.schedule();
    const PoolingAutoencoder pair = config.autoencoder();

    std::unique_ptr<Denoiser> denoiser;
    if (spec.kind == "gaussian") {
        denoiser = std::make_unique<AnalyticGaussianDenoiser>(schedule,
                                                              spec.mean,
                                                              spec.var);
    } else {
        double scale = spec.scale;
        if (scale == 0.0) {  // auto: peak condition magnitude -> 1.0
            double peak = 0.0;
            for (double v : condition.v) peak = std::max(peak, std::abs(v));
            scale = peak > 0.0 ? 1.0 / peak : 1.0;
        }
        std::vector<double> lift(config.latent_channels);
        for (std::size_t c = 0; c < lift.size(); ++c) lift[c] = pair.lift(c);
        denoiser = std::make_unique<ConditionPriorDenoiser>(
            schedule, std::move(lift), spec.var, scale);
    }

    TrajectoryObserver observe;
    if (trajectory_dir) {
        fs::create_directories(*trajectory_dir);
        observe = [&config, &pair, m, dir = *trajectory_dir](const LatentCode& state) {
            // Scalar projection of the latent channels, as in decoding.
            const std::size_t cells = m * m * m;
            std::vector<double> scalar(cells, 0.0);
            for (std::size_t c = 0; c < config.latent_channels; ++c)
                for (std::size_t i = 0; i < cells; ++i)
                    scalar[i] += pair.lift(c) * state.data.v[c * cells + i];
            const GridSpec grid = config.latent_grid();
            char name[48];
            std::snprintf(name, sizeof(name), "trajectory_t%04d.vol", state.t);
            write_vol1(dir / name,
                       Volume3D(grid.dim, grid.spacing, grid.origin,
                                VolumeUnit::HU, std::move(scalar)));
        };
    }

    const std::vector<std::size_t> shape{config.latent_channels, m, m, m};
    LatentCode z =
        config.sampler == "ancestral"
            ? sample_ancestral(*denoiser, condition, schedule, shape,
                               config.guidance, seed, observe)
            : sample_fast(*denoiser, condition, schedule, shape,
                          config.guidance, config.sampler_steps, seed, 2,
                          observe);

    if (!config.codebook_path.empty()) {
        Codebook book = read_cbk1(config.codebook_path);
        require(book.dim() == config.latent_channels,
                "reconstruct: codebook dimension must match latent channels");
        z.data = quantize(z.data, book, config.threads).z_q;
    }
    return pair.decode(z.data);
}

}  // namespace detail

/// reconstruct: condition -> sample -> decode -> VOL1.
inline fs::path run_reconstruct(const PipelineConfig& config,
                                const std::vector<fs::path>& xray_files,
                                const std::string& denoiser_spec,
                                const std::string& out_name = "recon.vol",
                                bool dump_trajectory = false) {
    config.validate();
    const auto views = detail::load_views(xray_files);
    const DenoiserSpec spec = DenoiserSpec::parse(denoiser_spec);
    std::optional<fs::path> trajectory_dir;
    if (dump_trajectory)
        trajectory_dir = config.out_root() / "trajectory";
    const Volume3D recon = detail::reconstruct_volume(
        config, views, spec, config.seed, trajectory_dir);
    const fs::path path = config.out(out_name);
    write_vol1(path, recon);
    return path;
}

struct UncertaintyOutputs {
    fs::path mean;
    fs::path variance;
    std::optional<fs::path> bias;
    std::optional<fs::path> squared_bias;
    std::optional<fs::path> mse;
    std::vector<fs::path> slices;
    fs::path summary;
};

/// uncertainty: N Monte Carlo reconstructions -> per-voxel maps + CSV.
inline UncertaintyOutputs run_uncertainty(
    const PipelineConfig& config, const std::vector<fs::path>& xray_files,
    std::size_t n_samples, const std::string& denoiser_spec,
    const std::optional<fs::path>& ground_truth_file = std::nullopt) {
    config.validate();
    require(n_samples >= 2, "uncertainty: need at least two samples");
    if (!config.mc_seeds.empty())
        require(config.mc_seeds.size() == n_samples,
                "uncertainty: explicit seed list must have one seed per sample");

    const auto views = detail::load_views(xray_files);
    const DenoiserSpec spec = DenoiserSpec::parse(denoiser_spec);
    auto sampler = [&](std::uint64_t seed) {
        return detail::reconstruct_volume(config, views, spec, seed);
    };

    std::vector<Volume3D> samples;
    if (!config.mc_seeds.empty()) {
        samples.reserve(n_samples);
        for (std::uint64_t s : config.mc_seeds) samples.push_back(sampler(s));
    } else {
        samples = mc_sample(sampler, n_samples, config.seed);
    }

    std::optional<Volume3D> truth;
    if (ground_truth_file) {
        truth = detail::to_normalized(read_vol1(*ground_truth_file),
                                      config.convention());
        require(truth->dim() == samples[0].dim(),
                "uncertainty: ground truth shape mismatch");
    }
    const UncertaintyMaps maps =
        voxel_stats(samples, truth ? &*truth : nullptr, config.threads);

    UncertaintyOutputs out;
    out.mean = config.out("mc_mean.vol");
    out.variance = config.out("mc_variance.vol");
    write_vol1(out.mean, maps.mean);
    write_vol1(out.variance, maps.variance);
    if (maps.bias) {
        out.bias = config.out("mc_bias.vol");
        out.squared_bias = config.out("mc_squared_bias.vol");
        out.mse = config.out("mc_mse.vol");
        write_vol1(*out.bias, *maps.bias);
        write_vol1(*out.squared_bias, *maps.squared_bias);
        write_vol1(*out.mse, *maps.mse);
    }
    const std::pair<SlicePlane, const char*> planes[] = {
        {SlicePlane::Axial, "axial"},
        {SlicePlane::Coronal, "coronal"},
        {SlicePlane::Sagittal, "sagittal"}};
    for (const auto& [plane, name] : planes) {
        const fs::path p =
            config.out(std::string("mc_variance_") + name + ".pgm");
        write_pgm16(p, render_maps(maps, MapKind::Variance, plane));
        out.slices.push_back(p);
    }

    auto volume_mean = [](const Volume3D& v) {
        double s = 0.0;
        for (double x : v.data()) s += x;
        return s / double(v.size());
    };
    CsvWriter csv({"stat", "value"});
    csv.append_row({"n_samples", std::to_string(maps.n_samples)});
    csv.append_row({"mean_variance", CsvWriter::num(volume_mean(maps.variance))});
    if (maps.squared_bias)
        csv.append_row(
            {"mean_squared_bias", CsvWriter::num(volume_mean(*maps.squared_bias))});
    if (maps.mse)
        csv.append_row({"mean_mse", CsvWriter::num(volume_mean(*maps.mse))});
    out.summary = config.out("mc_summary.csv");
    csv.save(out.summary);
    return out;
}

/// evaluate: PSNR/SSIM rows, plus DVH rows when dose and masks are given.
inline fs::path run_evaluate(
    const PipelineConfig& config, const fs::path& recon_file,
    const fs::path& gt_file,
    const std::optional<fs::path>& dose_file = std::nullopt,
    const std::vector<std::pair<std::string, fs::path>>& masks = {},
    const std::string& out_name = "evaluate.csv") {
    config.validate();
    const DatasetConvention conv = config.convention();
    const Volume3D recon =
        detail::to_normalized(read_vol1(recon_file), conv);
    const Volume3D truth = detail::to_normalized(read_vol1(gt_file), conv);
    require(recon.dim() == truth.dim(), "evaluate: volume shape mismatch");

    // Metrics run on normalized volumes; rescale the peak accordingly
    // (PSNR and SSIM are invariant under the common rescaling).
    const double peak = conv.i_max / (conv.clip_hi - conv.clip_lo);

    auto band = [&](const std::string& metric) {
        const auto it = config.metric_bands.find(metric);
        return it == config.metric_bands.end() ? std::string() : it->second;
    };

    CsvWriter csv({"metric", "structure", "value", "band"});
    csv.append_row(
        {"psnr", "-", CsvWriter::num(psnr(recon, truth, peak)), band("psnr")});
    csv.append_row({"ssim3d", "-",
                    CsvWriter::num(ssim3d(truth, recon, 11, 0.01, 0.03, peak,
                                          config.threads)),
                    band("ssim3d")});

    if (dose_file) {
        require(!masks.empty(), "evaluate: dose provided without masks");
        const Volume3D dose = read_vol1(*dose_file);
        for (const auto& [name, mask_file] : masks) {
            const Volume3D mask = read_vol1(mask_file);
            char label[64];
            std::snprintf(label, sizeof(label), "v%g%%", config.v_percent);
            csv.append_row({label, name,
                            CsvWriter::num(dvh_v_percent(dose, mask,
                                                         config.prescription_gy,
                                                         config.v_percent)),
                            band("v_percent")});
            std::snprintf(label, sizeof(label), "v%ggy", config.v_gray_threshold);
            csv.append_row({label, name,
                            CsvWriter::num(dvh_v_gray(dose, mask,
                                                      config.v_gray_threshold)),
                            band("v_gray")});
        }
    }
    const fs::path path = config.out(out_name);
    csv.save(path);
    return path;
}

/// report: summary statistics and center-slice renders for volume files.
inline fs::path run_report(const PipelineConfig& config,
                           const std::vector<fs::path>& volume_files,
                           const std::string& out_name = "report.csv") {
    config.validate();
    require(!volume_files.empty(), "report: need at least one volume");
    CsvWriter csv({"file", "min", "max", "mean", "stddev"});
    for (const auto& file : volume_files) {
        const Volume3D v = read_vol1(file);
        double lo = v.data()[0], hi = v.data()[0], sum = 0.0, sum2 = 0.0;
        for (double x : v.data()) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
            sum += x;
            sum2 += x * x;
        }
        const double mean = sum / double(v.size());
        const double var = std::max(0.0, sum2 / double(v.size()) - mean * mean);
        csv.append_row({file.filename().string(), CsvWriter::num(lo),
                        CsvWriter::num(hi), CsvWriter::num(mean),
                        CsvWriter::num(std::sqrt(var))});

        const std::string stem = file.stem().string();
        write_pgm16(config.out(stem + "_axial.pgm"),
                    slice_volume(v, SlicePlane::Axial, v.dim().d / 2));
        write_pgm16(config.out(stem + "_coronal.pgm"),
                    slice_volume(v, SlicePlane::Coronal, v.dim().h / 2));
        write_pgm16(config.out(stem + "_sagittal.pgm"),
                    slice_volume(v, SlicePlane::Sagittal, v.dim().w / 2));
    }
    const fs::path path = config.out(out_name);
    csv.save(path);
    return path;
}

}  // namespace sparsect
