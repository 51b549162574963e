// splatct: sparse-view cone-beam CT reconstruction with radiative Gaussian
// kernels. Subcommands: simulate, reconstruct, evaluate, export-slices.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "splatct/fdk.hpp"
#include "splatct/io.hpp"
#include "splatct/objectives.hpp"
#include "splatct/simulator.hpp"
#include "splatct/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace splatct;

namespace {

ScannerConfig default_scanner(int n_views) {
  ScannerConfig c;
  c.l_so_mm = 8.0;
  c.l_sd_mm = 12.0;
  c.detector_size_mm = Vec2(5.6, 5.6);
  c.detector_res_px = Vec2i(128, 128);
  c.extent_min_mm = Vec3(-1.0, -1.0, -1.0);
  c.extent_max_mm = Vec3(1.0, 1.0, 1.0);
  c.angles_rad = full_circle_angles(n_views);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

struct GlobalFlags {
  int threads = 0;
  bool deterministic = false;
};

int cmd_simulate(const GlobalFlags& g, const std::string& scanner_path, int views,
                 const std::string& phantom_spec, int phantom_dims,
                 const std::string& out_dir, uint64_t seed, bool noise, double i0,
                 double gauss_sigma, double step_mm) {
  ScannerConfig scanner =
      scanner_path.empty() ? default_scanner(views > 0 ? views : 50)
                           : load_scanner_config(scanner_path);
  if (views > 0 && !scanner_path.empty()) scanner.angles_rad = full_circle_angles(views);
  scanner.validate();

  DensityVolume phantom;
  if (phantom_spec == "shepp-logan") {
    phantom = phantom_shepp_logan_3d(Vec3i::Constant(phantom_dims),
                                     scanner.extent_min_mm, scanner.extent_max_mm);
  } else if (phantom_spec.rfind("file:", 0) == 0) {
    phantom = phantom_from_file(phantom_spec.substr(5));
  } else {
    throw ConfigError("--phantom must be 'shepp-logan' or 'file:PATH'");
  }

  if (step_mm <= 0.0) step_mm = 0.5 * phantom.spacing_mm.minCoeff();

  NoiseParams np;
  np.i0 = i0;
  np.gauss_sigma = gauss_sigma;
  np.seed = seed;

  std::cout << "simulate: views=" << scanner.angles_rad.size()
            << " detector=" << scanner.detector_res_px.x() << "x"
            << scanner.detector_res_px.y() << " phantom=" << phantom_spec << " dims="
            << phantom.dims.x() << "^3 step_mm=" << step_mm << " noise="
            << (noise ? "on" : "off") << " i0=" << np.i0 << " gauss_sigma="
            << np.gauss_sigma << " seed=" << seed << "\n";

  const ProjectionSet ps = simulate_projections(phantom, scanner, step_mm, np, noise);
  fs::create_directories(out_dir);
  save_projection_set(ps, out_dir);
  write_volume(phantom, (fs::path(out_dir) / "phantom.vol").string());

  json manifest;
  manifest["command"] = "simulate";
  manifest["scanner"] = json::parse(scanner_config_to_json_text(scanner));
  manifest["phantom"] = phantom_spec;
  manifest["phantom_dims"] = phantom_dims;
  manifest["step_mm"] = step_mm;
  manifest["noise"] = {{"applied", noise}, {"i0", np.i0},
                       {"gauss_sigma", np.gauss_sigma}, {"seed", np.seed}};
  manifest["deterministic"] = g.deterministic;
  write_text(fs::path(out_dir) / "run_manifest.json", manifest.dump(2) + "\n");
  std::cout << "simulate: wrote " << ps.n_views() << " views to " << out_dir << "\n";
  return 0;
}

int cmd_reconstruct(const GlobalFlags& g, const std::string& proj_dir,
                    const std::string& train_config_path, const std::string& out_dir,
                    const std::string& mode_override, const std::string& init_override,
                    int iters_override, int64_t seed_override, int output_dims_override) {
  TrainConfig cfg = train_config_path.empty() ? TrainConfig{}
                                              : load_train_config(train_config_path);
  if (!mode_override.empty()) {
    if (mode_override == "rectified") cfg.mode = RenderMode::kRectified;
    else if (mode_override == "biased") cfg.mode = RenderMode::kBiased;
    else throw ConfigError("--mode must be rectified or biased");
  }
  if (!init_override.empty()) {
    if (init_override == "fdk") cfg.random_init = false;
    else if (init_override == "random") cfg.random_init = true;
    else throw ConfigError("--init must be fdk or random");
  }
  if (iters_override > 0) cfg.iters = iters_override;
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  if (output_dims_override > 0) cfg.output_dims = Vec3i::Constant(output_dims_override);
  if (g.deterministic) cfg.deterministic = true;
  cfg.validate();

  const ProjectionSet ps = load_projection_set(proj_dir);
  std::cout << "reconstruct: resolved train config:\n"
            << train_config_to_json_text(cfg);

  fs::create_directories(out_dir);
  const GridSpec out_grid = grid_for_extent(ps.scanner.extent_min_mm,
                                            ps.scanner.extent_max_mm, cfg.output_dims);

  const double s_min = 1e-4 * ps.scanner.extent_size_mm().maxCoeff();
  std::mt19937_64 init_rng(cfg.seed);
  GaussianCloud cloud;
  if (cfg.random_init) {
    cloud = random_init_cloud(ps.scanner.extent_min_mm, ps.scanner.extent_max_mm,
                              cfg.init.count, s_min, init_rng);
  } else {
    const DensityVolume fdk = fdk_reconstruct(ps, out_grid);
    write_volume(fdk, (fs::path(out_dir) / "fdk.vol").string());
    cloud = sample_init_cloud(fdk, cfg.init, s_min, init_rng);
  }
  std::cout << "reconstruct: initialized " << cloud.size() << " kernels ("
            << (cfg.random_init ? "random" : "fdk") << ")\n";

  std::ofstream history_out(fs::path(out_dir) / "history.jsonl");
  if (!history_out) throw DataError("cannot write history in " + out_dir);
  TrainResult result = train(std::move(cloud), ps, cfg, [&](const HistoryRecord& r) {
    history_out << history_json_line(r) << "\n";
  });
  history_out.close();

  save_cloud(result.cloud, (fs::path(out_dir) / "cloud.ckpt").string());

  GaussianCloud final_cloud = result.cloud;
  if (cfg.mode == RenderMode::kBiased)
    final_cloud = recover_biased_densities(result.cloud, ps.scanner, ps.angles_rad[0]);
  const DensityVolume final_vol = voxelize(final_cloud, out_grid);
  write_volume(final_vol, (fs::path(out_dir) / "final.vol").string());

  json manifest;
  manifest["command"] = "reconstruct";
  manifest["proj_dir"] = proj_dir;
  manifest["train_config"] = json::parse(train_config_to_json_text(cfg));
  manifest["scanner"] = json::parse(scanner_config_to_json_text(ps.scanner));
  manifest["projection_norm"] = result.projection_norm;
  manifest["kernels_final"] = result.cloud.size();
  manifest["deterministic"] = cfg.deterministic;
  manifest["biased_recovery_view_rad"] =
      cfg.mode == RenderMode::kBiased ? json(ps.angles_rad[0]) : json(nullptr);
  write_text(fs::path(out_dir) / "run_manifest.json", manifest.dump(2) + "\n");
  std::cout << "reconstruct: " << result.cloud.size() << " kernels, final loss "
            << (result.history.empty() ? 0.0 : result.history.back().total)
            << ", outputs in " << out_dir << "\n";
  return 0;
}

int cmd_evaluate(const std::string& volume_path, const std::string& reference_path,
                 const std::string& out_path) {
  const DensityVolume vol = read_volume(volume_path);
  const DensityVolume ref = read_volume(reference_path);
  for (double v : ref.data)
    if (v < -1e-9 || v > 1.0 + 1e-9)
      throw DataError("evaluate: reference volume must be within [0,1]");
  const MetricsRecord m = evaluate_volume(vol, ref);
  const std::string line = metrics_json_line(m);
  std::cout << line << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::app);
    if (!out) throw DataError("cannot write " + out_path);
    out << line << "\n";
  }
  return 0;
}

int cmd_export_slices(const std::string& volume_path, const std::string& axis,
                      const std::string& out_dir, double win_min, double win_max,
                      bool has_window) {
  fs::create_directories(out_dir);

  // image containers export as a single PNG
  std::ifstream probe(volume_path);
  std::string first_line;
  std::getline(probe, first_line);
  probe.close();
  const bool is_image = first_line.find("\"kind\": \"image\"") != std::string::npos ||
                        first_line.find("\"kind\":\"image\"") != std::string::npos;

  if (is_image) {
    const Image img = read_image(volume_path);
    double lo = win_min, hi = win_max;
    if (!has_window) {
      lo = *std::min_element(img.data.begin(), img.data.end());
      hi = *std::max_element(img.data.begin(), img.data.end());
      if (!(hi > lo)) hi = lo + 1.0;
    }
    write_png_gray8(img, (fs::path(out_dir) / "image.png").string(), lo, hi);
    std::cout << "export-slices: wrote 1 png to " << out_dir << "\n";
    return 0;
  }

  const DensityVolume vol = read_volume(volume_path);
  int ax;
  if (axis == "x") ax = 0;
  else if (axis == "y") ax = 1;
  else if (axis == "z") ax = 2;
  else throw ConfigError("--axis must be x, y or z");

  double lo = win_min, hi = win_max;
  if (!has_window) {
    lo = *std::min_element(vol.data.begin(), vol.data.end());
    hi = *std::max_element(vol.data.begin(), vol.data.end());
    if (!(hi > lo)) hi = lo + 1.0;
  }

  const int n = vol.dims[ax];
  for (int s = 0; s < n; ++s) {
    int w = ax == 0 ? vol.dims.y() : vol.dims.x();
    int h = ax == 2 ? vol.dims.y() : vol.dims.z();
    Image img(w, h, 0.0);
    for (int b = 0; b < h; ++b)
      for (int a = 0; a < w; ++a) {
        double val;
        if (ax == 0) val = vol.at(s, a, b);
        else if (ax == 1) val = vol.at(a, s, b);
        else val = vol.at(a, b, s);
        img.at(a, b) = val;
      }
    char name[32];
    std::snprintf(name, sizeof(name), "slice_%s_%04d.png", axis.c_str(), s);
    write_png_gray8(img, (fs::path(out_dir) / name).string(), lo, hi);
  }
  std::cout << "export-slices: wrote " << n << " pngs to " << out_dir << "\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-view cone-beam CT reconstruction with radiative Gaussian kernels"};
  app.require_subcommand(1);

  GlobalFlags g;
  app.add_option("--threads", g.threads, "worker threads (0 = auto)");
  app.add_flag("--deterministic", g.deterministic,
               "fixed-order reductions and zeroed wall-clock fields for "
               "byte-identical reruns");

  auto* sim = app.add_subcommand("simulate", "generate a noisy projection set");
  std::string sim_scanner, sim_phantom = "shepp-logan", sim_out;
  int sim_views = 0, sim_dims = 64;
  uint64_t sim_seed = 0;
  bool sim_no_noise = false;
  double sim_i0 = 1e5, sim_sigma = 10.0, sim_step = 0.0;
  sim->add_option("--scanner", sim_scanner, "scanner config JSON (default: built-in desk scanner)");
  sim->add_option("--views", sim_views, "view count preset (25/50/75 or any N), full circle");
  sim->add_option("--phantom", sim_phantom, "shepp-logan | file:PATH");
  sim->add_option("--phantom-dims", sim_dims, "phantom voxels per axis");
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--seed", sim_seed, "noise seed");
  sim->add_flag("--no-noise", sim_no_noise, "write clean projections");
  sim->add_option("--i0", sim_i0, "photons per unattenuated ray");
  sim->add_option("--gauss-sigma", sim_sigma, "detector readout noise std, counts");
  sim->add_option("--step-mm", sim_step, "quadrature step (default: half voxel)");

  auto* rec = app.add_subcommand("reconstruct", "FDK init + gaussian optimization");
  std::string rec_proj, rec_cfg, rec_out, rec_mode, rec_init;
  int rec_iters = 0, rec_dims = 0;
  int64_t rec_seed = -1;
  rec->add_option("--proj", rec_proj, "projection set directory")->required();
  rec->add_option("--train-config", rec_cfg, "train config JSON (default: paper-scale values)");
  rec->add_option("--out", rec_out, "output directory")->required();
  rec->add_option("--mode", rec_mode, "rectified | biased (ablation path)");
  rec->add_option("--init", rec_init, "fdk | random (ablation baseline)");
  rec->add_option("--iters", rec_iters, "override iteration count");
  rec->add_option("--seed", rec_seed, "override training seed");
  rec->add_option("--output-dims", rec_dims, "override output volume voxels per axis");

  auto* eva = app.add_subcommand("evaluate", "PSNR/SSIM of a volume against a reference");
  std::string eva_vol, eva_ref, eva_out;
  eva->add_option("--volume", eva_vol, "volume file")->required();
  eva->add_option("--reference", eva_ref, "reference volume in [0,1]")->required();
  eva->add_option("--out", eva_out, "append the metrics JSON line to this file");

  auto* exp = app.add_subcommand("export-slices", "write windowed 8-bit PNG slices");
  std::string exp_vol, exp_axis = "z", exp_out;
  std::vector<double> exp_window;
  exp->add_option("--volume", exp_vol, "volume (or image) file")->required();
  exp->add_option("--axis", exp_axis, "slice axis: x | y | z");
  exp->add_option("--out", exp_out, "output directory")->required();
  exp->add_option("--window", exp_window, "display window MIN MAX (default: data range)")
      ->expected(2);

  CLI11_PARSE(app, argc, argv);

  try {
    set_num_threads(g.threads);
    if (sim->parsed())
      return cmd_simulate(g, sim_scanner, sim_views, sim_phantom, sim_dims, sim_out,
                          sim_seed, !sim_no_noise, sim_i0, sim_sigma, sim_step);
    if (rec->parsed())
      return cmd_reconstruct(g, rec_proj, rec_cfg, rec_out, rec_mode, rec_init,
                             rec_iters, rec_seed, rec_dims);
    if (eva->parsed()) return cmd_evaluate(eva_vol, eva_ref, eva_out);
    if (exp->parsed())
      return cmd_export_slices(exp_vol, exp_axis, exp_out,
                               exp_window.size() == 2 ? exp_window[0] : 0.0,
                               exp_window.size() == 2 ? exp_window[1] : 1.0,
                               exp_window.size() == 2);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceDetected& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
