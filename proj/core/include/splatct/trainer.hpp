#pragma once

#include <functional>
#include <random>

#include "splatct/fdk.hpp"
#include "splatct/objectives.hpp"
#include "splatct/rasterizer.hpp"
#include "splatct/simulator.hpp"

namespace splatct {

struct TrainConfig {
  int iters = 30000;
  double lr_position = 0.0002;
  double lr_density = 0.01;
  double lr_scale = 0.005;
  double lr_rotation = 0.001;
  double lr_final_ratio = 0.1; // per-group exponential decay to ratio * init

  double lambda_ssim = 0.25;
  double lambda_tv = 0.05;
  int tv_grid_dim = 32; // D

  int adaptive_start = 500;
  int adaptive_end = 15000;
  int densify_interval = 100;
  double densify_grad_threshold = 0.00005;
  double prune_density_threshold = 0.005;
  double split_scale_threshold_frac = 0.01; // of the max extent side
  double split_factor = 1.6;

  uint64_t seed = 0;
  RenderMode mode = RenderMode::kRectified;

  InitParams init;                 // FDK sampling parameters
  bool random_init = false;        // ablation baseline "B"
  Vec3i output_dims{64, 64, 64};

  int history_interval = 10;
  bool deterministic = false; // zeroes wall-clock fields in history records

  void validate() const;
};

TrainConfig load_train_config(const std::string& path);
TrainConfig train_config_from_json_text(const std::string& text);
std::string train_config_to_json_text(const TrainConfig& c);

/// lr(t) = lr_init * ratio^(t/iters); t runs 1..iters so the final step
/// uses exactly ratio * lr_init.
double lr_at(double lr_init, double final_ratio, int t, int iters);

struct HistoryRecord {
  int iter = 0;
  double l1 = 0.0;
  double dssim = 0.0;
  double tv = 0.0;
  double total = 0.0;
  int kernels = 0;
  double wall_ms = 0.0;
};

std::string history_json_line(const HistoryRecord& r);

struct AdaptiveControlStats {
  int pruned = 0;
  int cloned = 0;
  int split = 0;
};

/// Modified adaptive control: prune near-empty kernels, then clone (small)
/// or split (large) kernels whose mean screen-space position gradient
/// exceeds the threshold; densities of parents and children are halved.
/// Never prunes by size. Resets Adam moments of new kernels and the
/// gradient accumulators.
AdaptiveControlStats adaptive_control(GaussianCloud& cloud, const TrainConfig& cfg,
                                      const Vec3& extent_size_mm, std::mt19937_64& rng);

struct TrainResult {
  GaussianCloud cloud;
  std::vector<HistoryRecord> history;
  double projection_norm = 1.0; // dataset max used to normalize photometric losses
};

using TrainCallback = std::function<void(const HistoryRecord&)>;

TrainResult train(GaussianCloud cloud, const ProjectionSet& projections,
                  const TrainConfig& cfg, TrainCallback callback = nullptr);

/// X-3DGS ablation: biased training learns image-plane amplitudes, so the
/// 3D density is recovered by dividing each kernel's density by its mu
/// from one reference view before voxelization.
GaussianCloud recover_biased_densities(const GaussianCloud& cloud,
                                       const ScannerConfig& config,
                                       double theta_ref_rad);

} // namespace splatct
