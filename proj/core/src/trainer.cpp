#include "splatct/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace splatct {

void TrainConfig::validate() const {
  if (iters < 1) throw ConfigError("train: iters must be >= 1");
  if (lr_position < 0 || lr_density < 0 || lr_scale < 0 || lr_rotation < 0)
    throw ConfigError("train: learning rates must be >= 0");
  if (!(lr_final_ratio > 0.0)) throw ConfigError("train: lr_final_ratio must be > 0");
  if (lambda_ssim < 0 || lambda_tv < 0)
    throw ConfigError("train: loss weights must be >= 0");
  if (tv_grid_dim < 2) throw ConfigError("train: tv_grid_dim must be >= 2");
  if (adaptive_start < 0 || adaptive_end < adaptive_start || adaptive_end > iters)
    throw ConfigError("train: adaptive window must satisfy 0 <= start <= end <= iters");
  if (densify_interval < 1) throw ConfigError("train: densify_interval must be >= 1");
  if (densify_grad_threshold < 0 || prune_density_threshold < 0 ||
      split_scale_threshold_frac < 0)
    throw ConfigError("train: thresholds must be >= 0");
  if (!(split_factor > 1.0)) throw ConfigError("train: split_factor must be > 1");
  if (init.count < 1) throw ConfigError("train: init.count must be >= 1");
  if ((output_dims.array() < 1).any())
    throw ConfigError("train: output_dims must be >= 1");
}

double lr_at(double lr_init, double final_ratio, int t, int iters) {
  return lr_init * std::pow(final_ratio, static_cast<double>(t) / iters);
}

namespace {

using nlohmann::json;

void apply_key(TrainConfig& c, const std::string& key, const json& v) {
  if (key == "iters") c.iters = v.get<int>();
  else if (key == "lr_position") c.lr_position = v.get<double>();
  else if (key == "lr_density") c.lr_density = v.get<double>();
  else if (key == "lr_scale") c.lr_scale = v.get<double>();
  else if (key == "lr_rotation") c.lr_rotation = v.get<double>();
  else if (key == "lr_final_ratio") c.lr_final_ratio = v.get<double>();
  else if (key == "lambda_ssim") c.lambda_ssim = v.get<double>();
  else if (key == "lambda_tv") c.lambda_tv = v.get<double>();
  else if (key == "tv_grid_dim") c.tv_grid_dim = v.get<int>();
  else if (key == "adaptive_start") c.adaptive_start = v.get<int>();
  else if (key == "adaptive_end") c.adaptive_end = v.get<int>();
  else if (key == "densify_interval") c.densify_interval = v.get<int>();
  else if (key == "densify_grad_threshold") c.densify_grad_threshold = v.get<double>();
  else if (key == "prune_density_threshold") c.prune_density_threshold = v.get<double>();
  else if (key == "split_scale_threshold_frac") c.split_scale_threshold_frac = v.get<double>();
  else if (key == "split_factor") c.split_factor = v.get<double>();
  else if (key == "seed") c.seed = v.get<uint64_t>();
  else if (key == "mode") {
    const std::string m = v.get<std::string>();
    if (m == "rectified") c.mode = RenderMode::kRectified;
    else if (m == "biased") c.mode = RenderMode::kBiased;
    else throw ConfigError("train config: mode must be rectified or biased");
  } else if (key == "init_count") c.init.count = v.get<int>();
  else if (key == "init_density_threshold") c.init.density_threshold = v.get<double>();
  else if (key == "init_density_scale") c.init.density_scale = v.get<double>();
  else if (key == "random_init") c.random_init = v.get<bool>();
  else if (key == "output_dims") {
    c.output_dims = Vec3i(v.at(0).get<int>(), v.at(1).get<int>(), v.at(2).get<int>());
  } else if (key == "history_interval") c.history_interval = v.get<int>();
  else if (key == "deterministic") c.deterministic = v.get<bool>();
  else throw ConfigError("train config: unknown key '" + key + "'");
}

} // namespace

TrainConfig train_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: invalid JSON: ") + e.what());
  }
  TrainConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) apply_key(c, it.key(), it.value());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open train config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return train_config_from_json_text(ss.str());
}

std::string train_config_to_json_text(const TrainConfig& c) {
  json j;
  j["iters"] = c.iters;
  j["lr_position"] = c.lr_position;
  j["lr_density"] = c.lr_density;
  j["lr_scale"] = c.lr_scale;
  j["lr_rotation"] = c.lr_rotation;
  j["lr_final_ratio"] = c.lr_final_ratio;
  j["lambda_ssim"] = c.lambda_ssim;
  j["lambda_tv"] = c.lambda_tv;
  j["tv_grid_dim"] = c.tv_grid_dim;
  j["adaptive_start"] = c.adaptive_start;
  j["adaptive_end"] = c.adaptive_end;
  j["densify_interval"] = c.densify_interval;
  j["densify_grad_threshold"] = c.densify_grad_threshold;
  j["prune_density_threshold"] = c.prune_density_threshold;
  j["split_scale_threshold_frac"] = c.split_scale_threshold_frac;
  j["split_factor"] = c.split_factor;
  j["seed"] = c.seed;
  j["mode"] = c.mode == RenderMode::kRectified ? "rectified" : "biased";
  j["init_count"] = c.init.count;
  j["init_density_threshold"] = c.init.density_threshold;
  j["init_density_scale"] = c.init.density_scale;
  j["random_init"] = c.random_init;
  j["output_dims"] = {c.output_dims.x(), c.output_dims.y(), c.output_dims.z()};
  j["history_interval"] = c.history_interval;
  j["deterministic"] = c.deterministic;
  return j.dump(2) + "\n";
}

std::string history_json_line(const HistoryRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"iter\": " << r.iter << ", \"l1\": " << r.l1 << ", \"dssim\": " << r.dssim
     << ", \"tv\": " << r.tv << ", \"total\": " << r.total
     << ", \"kernels\": " << r.kernels << ", \"wall_ms\": " << r.wall_ms << "}";
  return os.str();
}

namespace {

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
  int step_count = 0;

  void step(std::vector<double>& params, std::vector<double>& m, std::vector<double>& v,
            const std::vector<double>& grads, double lr) const {
    const double bc1 = 1.0 - std::pow(beta1, step_count);
    const double bc2 = 1.0 - std::pow(beta2, step_count);
    for (size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

} // namespace

AdaptiveControlStats adaptive_control(GaussianCloud& cloud, const TrainConfig& cfg,
                                      const Vec3& extent_size_mm, std::mt19937_64& rng) {
  AdaptiveControlStats stats;
  const int m = cloud.size();

  // prune near-empty kernels; kernels are never pruned by size
  std::vector<char> keep(m, 1);
  for (int i = 0; i < m; ++i)
    if (cloud.rho(i) < cfg.prune_density_threshold) {
      keep[i] = 0;
      ++stats.pruned;
    }

  struct NewKernel {
    RadiativeGaussian g;
  };
  std::vector<NewKernel> added;
  const double size_threshold = cfg.split_scale_threshold_frac * extent_size_mm.maxCoeff();
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int i = 0; i < m; ++i) {
    if (!keep[i]) continue;
    if (cloud.grad_count[i] == 0) continue;
    const double mean_grad = cloud.grad2d_norm_accum[i] / cloud.grad_count[i];
    if (mean_grad <= cfg.densify_grad_threshold) continue;

    const Vec3 s = cloud.scale(i);
    const double rho_half = 0.5 * cloud.rho(i);
    if (rho_half <= 0.0) continue;

    if (s.maxCoeff() <= size_threshold) {
      // clone: keep the parent (halved), add a copy displaced down the
      // accumulated position gradient, scaled by the kernel's mean scale
      RadiativeGaussian child = cloud.kernel(i);
      child.rho = rho_half;
      Vec3 gdir(cloud.grad3d_accum[3 * i], cloud.grad3d_accum[3 * i + 1],
                cloud.grad3d_accum[3 * i + 2]);
      const double norm = gdir.norm();
      if (norm > 0.0) child.position_mm -= (s.mean() / norm) * gdir;
      cloud.rho_raw[i] = act_density_inv(rho_half);
      added.push_back({child});
      ++stats.cloned;
    } else {
      // split: replace the parent by two children with reduced scales,
      // positions sampled from the parent's own distribution
      keep[i] = 0;
      const Mat3 rot = cloud.rotation_at(i);
      for (int c = 0; c < 2; ++c) {
        RadiativeGaussian child = cloud.kernel(i);
        child.rho = rho_half;
        child.scale_mm = (s / cfg.split_factor).cwiseMax(cloud.s_min() * (1.0 + 1e-6));
        Vec3 local(gauss(rng) * s.x(), gauss(rng) * s.y(), gauss(rng) * s.z());
        child.position_mm += rot * local;
        added.push_back({child});
      }
      ++stats.split;
    }
  }

  cloud.remove_kernels(keep);
  for (const auto& nk : added) cloud.add_kernel(nk.g); // fresh Adam state
  cloud.reset_grad_stats();
  return stats;
}

TrainResult train(GaussianCloud cloud, const ProjectionSet& projections,
                  const TrainConfig& cfg, TrainCallback callback) {
  cfg.validate();
  if (projections.n_views() < 1) throw InsufficientViews("train: need >= 1 projection");
  if (cloud.size() < 1) throw ConfigError("train: empty initial cloud");

  const ScannerConfig& scanner = projections.scanner;
  const Vec3 extent_size = scanner.extent_size_mm();
  const Vec3 output_spacing =
      extent_size.cwiseQuotient(cfg.output_dims.cast<double>());

  // photometric losses run on projections normalized by the dataset max
  double norm = projections.max_value();
  if (!(norm > 0.0)) norm = 1.0;
  const double inv_norm = 1.0 / norm;

  std::vector<Image> measured_norm(projections.n_views());
  for (int i = 0; i < projections.n_views(); ++i) {
    measured_norm[i] = projections.images[i];
    for (double& v : measured_norm[i].data) v *= inv_norm;
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(projections.n_views());
  std::iota(order.begin(), order.end(), 0);
  int epoch_pos = projections.n_views(); // forces a shuffle on first use

  RasterOptions ropts;
  ropts.mode = cfg.mode;

  Adam adam;
  TrainResult result;
  result.projection_norm = norm;
  CloudGrads grads;

  const auto t_start = std::chrono::steady_clock::now();
  for (int t = 1; t <= cfg.iters; ++t) {
    if (epoch_pos >= projections.n_views()) {
      std::shuffle(order.begin(), order.end(), rng);
      epoch_pos = 0;
    }
    const int view = order[epoch_pos++];
    const double theta = projections.angles_rad[view];

    RenderedProjection fwd = render(cloud, scanner, theta, ropts);
    Image rendered_norm = fwd.image;
    for (double& v : rendered_norm.data) v *= inv_norm;

    const LossResult l1 = l1_loss(rendered_norm, measured_norm[view]);
    const LossResult dssim = dssim_loss(rendered_norm, measured_norm[view]);

    grads.resize(cloud.size());
    Image dL_dimage(fwd.image.width, fwd.image.height, 0.0);
    for (size_t i = 0; i < dL_dimage.data.size(); ++i)
      dL_dimage.data[i] =
          (l1.grad.data[i] + cfg.lambda_ssim * dssim.grad.data[i]) * inv_norm;
    render_backward(cloud, scanner, theta, fwd, dL_dimage, grads, ropts, true);

    double tv_value = 0.0;
    if (cfg.lambda_tv > 0.0) {
      const GridSpec sub = random_subvolume_spec(
          scanner.extent_min_mm, scanner.extent_max_mm, output_spacing,
          cfg.tv_grid_dim, rng);
      const DensityVolume subvol = voxelize(cloud, sub);
      VolumeLossResult tv = tv3d_loss(subvol);
      tv_value = tv.value;
      for (double& g : tv.grad.data) g *= cfg.lambda_tv;
      voxelize_backward(cloud, sub, tv.grad, grads);
    }

    const double total =
        total_loss(l1.value, dssim.value, tv_value, cfg.lambda_ssim, cfg.lambda_tv);
    if (!std::isfinite(total))
      throw DivergenceDetected("non-finite loss at iteration " + std::to_string(t) +
                               " (l1=" + std::to_string(l1.value) +
                               ", dssim=" + std::to_string(dssim.value) +
                               ", tv=" + std::to_string(tv_value) + ")");

    adam.step_count = t;
    adam.step(cloud.pos, cloud.adam_m_pos, cloud.adam_v_pos, grads.pos,
              lr_at(cfg.lr_position, cfg.lr_final_ratio, t, cfg.iters));
    adam.step(cloud.rho_raw, cloud.adam_m_rho, cloud.adam_v_rho, grads.rho_raw,
              lr_at(cfg.lr_density, cfg.lr_final_ratio, t, cfg.iters));
    adam.step(cloud.scale_raw, cloud.adam_m_scale, cloud.adam_v_scale, grads.scale_raw,
              lr_at(cfg.lr_scale, cfg.lr_final_ratio, t, cfg.iters));
    adam.step(cloud.rot, cloud.adam_m_rot, cloud.adam_v_rot, grads.rot,
              lr_at(cfg.lr_rotation, cfg.lr_final_ratio, t, cfg.iters));
    cloud.normalize_rotations();

    if (t >= cfg.adaptive_start && t <= cfg.adaptive_end &&
        (t - cfg.adaptive_start) % cfg.densify_interval == 0 && t > cfg.adaptive_start)
      adaptive_control(cloud, cfg, extent_size, rng);

    if (t % cfg.history_interval == 0 || t == cfg.iters) {
      HistoryRecord rec;
      rec.iter = t;
      rec.l1 = l1.value;
      rec.dssim = dssim.value;
      rec.tv = tv_value;
      rec.total = total;
      rec.kernels = cloud.size();
      rec.wall_ms =
          cfg.deterministic
              ? 0.0
              : std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t_start).count();
      result.history.push_back(rec);
      if (callback) callback(rec);
    }
  }

  result.cloud = std::move(cloud);
  return result;
}

GaussianCloud recover_biased_densities(const GaussianCloud& cloud,
                                       const ScannerConfig& config,
                                       double theta_ref_rad) {
  const ViewTransform view = view_transform(config, theta_ref_rad);
  const DetectorModel det = detector_model(config);
  RasterOptions opts;
  opts.mode = RenderMode::kBiased;
  GaussianCloud out = cloud;
  for (int i = 0; i < cloud.size(); ++i) {
    const auto pg = project_kernel(cloud, i, view, det, opts);
    // culled kernels keep their density; isotropic fallback would need the
    // same mu anyway
    if (!pg || !(pg->mu > 0.0)) continue;
    const double rho = cloud.rho(i) / pg->mu;
    out.rho_raw[i] = act_density_inv(std::max(rho, 1e-12));
  }
  return out;
}

} // namespace splatct
