// SPDX-License-Identifier: Apache-2.0
//
// sparsect command line: phantom generation, DRR simulation, feature fusion,
// diffusion reconstruction, Monte Carlo uncertainty and metric reports.
// Exit codes: 0 success, 2 validation/configuration error, 3 runtime error.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sparsect/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sparsect;

namespace {

struct GlobalArgs {
    std::string config_file;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::string> dataset;
    std::optional<std::string> sampler;
    std::optional<int> steps;
    std::optional<double> guidance;
};

PipelineConfig resolve_config(const GlobalArgs& args) {
    PipelineConfig config = args.config_file.empty()
                                ? PipelineConfig{}
                                : PipelineConfig::load(args.config_file);
    if (!args.output_dir.empty()) config.output_dir = args.output_dir;
    if (args.seed) config.seed = *args.seed;
    if (args.threads) config.threads = *args.threads;
    if (args.dataset) config.dataset = *args.dataset;
    if (args.sampler) config.sampler = *args.sampler;
    if (args.steps) config.sampler_steps = *args.steps;
    if (args.guidance) config.guidance = *args.guidance;
    config.validate();
    return config;
}

std::vector<fs::path> to_paths(const std::vector<std::string>& names) {
    return {names.begin(), names.end()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "sparsect: sparse-view CT reconstruction workbench\n"
        "DRR simulation, multi-view feature fusion, latent diffusion sampling "
        "and Monte Carlo uncertainty maps on synthetic phantoms."};
    app.require_subcommand(1);

    GlobalArgs args;
    app.add_option("-c,--config", args.config_file, "JSON config file");
    app.add_option("-o,--out", args.output_dir,
                   "output directory (default: $SPARSECT_OUT or cwd)");
    app.add_option("--seed", args.seed, "base RNG seed");
    app.add_option("--threads", args.threads, "worker threads (0 = hardware)");
    app.add_option("--dataset", args.dataset,
                   "HU convention: phantom | lidc | thoracic");
    app.add_option("--sampler", args.sampler, "sampler: fast | ancestral");
    app.add_option("--steps", args.steps, "fast sampler step count");
    app.add_option("--guidance", args.guidance, "classifier-free guidance w");

    // phantom
    auto* phantom = app.add_subcommand("phantom", "render a synthetic phantom");
    std::string phantom_kind = "shepp3d";
    std::size_t phantom_n = 128;
    std::string phantom_out;
    phantom->add_option("kind", phantom_kind,
                        "shepp3d | lung | empty | path to a phantom file");
    phantom->add_option("-n,--size", phantom_n, "cube size in voxels");
    phantom->add_option("--name", phantom_out, "output file name");

    // drr
    auto* drr = app.add_subcommand("drr", "render DRRs at the configured angles");
    std::string drr_volume;
    drr->add_option("volume", drr_volume, "input VOL1 file")->required();

    // fuse
    auto* fuse_cmd =
        app.add_subcommand("fuse", "build the fused conditioning volume");
    std::vector<std::string> fuse_xrays;
    fuse_cmd->add_option("xrays", fuse_xrays, "input PGM x-rays with sidecars")
        ->required();

    // reconstruct
    auto* recon = app.add_subcommand(
        "reconstruct", "sample a reconstruction from x-ray views");
    std::vector<std::string> recon_xrays;
    std::string recon_denoiser = "condition:var=0.05";
    std::string recon_out = "recon.vol";
    bool recon_dump = false;
    recon->add_option("xrays", recon_xrays, "input PGM x-rays with sidecars")
        ->required();
    recon->add_option("--denoiser", recon_denoiser,
                      "gaussian:mean=M,var=V | condition:var=V[,scale=S]");
    recon->add_option("--name", recon_out, "output file name");
    recon->add_flag("--dump-trajectory", recon_dump,
                    "write each intermediate latent state as a VOL1 file");

    // uncertainty
    auto* unc = app.add_subcommand(
        "uncertainty", "Monte Carlo sampling with per-voxel statistics");
    std::vector<std::string> unc_xrays;
    std::size_t unc_n = 0;
    std::string unc_denoiser = "condition:var=0.05";
    std::string unc_gt;
    unc->add_option("xrays", unc_xrays, "input PGM x-rays with sidecars")
        ->required();
    unc->add_option("-N,--samples", unc_n,
                    "number of MC samples (default: run.mc_samples)");
    unc->add_option("--denoiser", unc_denoiser, "denoiser spec");
    unc->add_option("--gt", unc_gt,
                    "ground truth VOL1 enabling bias and MSE maps");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "PSNR/SSIM and DVH report");
    std::string eval_recon, eval_gt, eval_dose;
    std::vector<std::string> eval_masks;
    eval->add_option("recon", eval_recon, "reconstruction VOL1")->required();
    eval->add_option("gt", eval_gt, "ground truth VOL1")->required();
    eval->add_option("--dose", eval_dose, "dose VOL1 in Gy");
    eval->add_option("--mask", eval_masks,
                     "structure mask as name=file.vol (repeatable)");

    // report
    auto* report =
        app.add_subcommand("report", "summary stats and slice renders");
    std::vector<std::string> report_vols;
    report->add_option("volumes", report_vols, "VOL1 files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const PipelineConfig config = resolve_config(args);

        if (*phantom) {
            const fs::path path =
                run_phantom(config, phantom_kind, phantom_n, phantom_out);
            std::printf("wrote %s\n", path.c_str());
        } else if (*drr) {
            for (const auto& path : run_drr(config, drr_volume))
                std::printf("wrote %s\n", path.c_str());
        } else if (*fuse_cmd) {
            std::printf("wrote %s\n",
                        run_fuse(config, to_paths(fuse_xrays)).c_str());
        } else if (*recon) {
            const fs::path path =
                run_reconstruct(config, to_paths(recon_xrays), recon_denoiser,
                                recon_out, recon_dump);
            std::printf("wrote %s\n", path.c_str());
        } else if (*unc) {
            const std::size_t n = unc_n ? unc_n : config.mc_samples;
            std::optional<fs::path> gt;
            if (!unc_gt.empty()) gt = unc_gt;
            const UncertaintyOutputs out = run_uncertainty(
                config, to_paths(unc_xrays), n, unc_denoiser, gt);
            std::printf("wrote %s\n", out.summary.c_str());
        } else if (*eval) {
            std::optional<fs::path> dose;
            if (!eval_dose.empty()) dose = eval_dose;
            std::vector<std::pair<std::string, fs::path>> masks;
            for (const auto& m : eval_masks) {
                const auto eq = m.find('=');
                require(eq != std::string::npos,
                        "mask must be name=file.vol, got '" + m + "'");
                masks.emplace_back(m.substr(0, eq), m.substr(eq + 1));
            }
            const fs::path path = run_evaluate(config, eval_recon, eval_gt,
                                               dose, masks);
            std::printf("wrote %s\n", path.c_str());
        } else if (*report) {
            std::printf("wrote %s\n",
                        run_report(config, to_paths(report_vols)).c_str());
        }
        return 0;
    } catch (const validation_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
