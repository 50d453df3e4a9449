// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_TRAINING_HPP
#define PAC_TRAINING_HPP

// Optimiser, learning-rate schedule, task-modality dropout, the training
// loop, objective presets, config files and checkpoints.

#include "pac/autodiff.hpp"
#include "pac/datasets.hpp"
#include "pac/model.hpp"
#include "pac/objectives.hpp"
#include "pac/rng.hpp"
#include "pac/value_bins.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace pac {

struct OptimConfig {
  double lr_init = 1e-4;
  double lr_peak = 1e-3;
  double lr_end = 1e-4;
  std::int64_t warmup_steps = 100;
  std::int64_t decay_steps = 2000;  // absolute step at which the cosine reaches lr_end
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 1e-3;
  double clip_norm = 1.0;  // <= 0 disables clipping
  int batch_size = 32;
  int traj_len = 5;

  void validate() const;
  /// Preset optimiser settings of model scale XXS, XS, S, M or L.
  static OptimConfig scale_preset(const std::string& scale);
};

/// Linear warmup, cosine decay to lr_end at decay_steps, constant afterwards.
double lr_at(std::int64_t step, const OptimConfig& cfg);

struct AdamState {
  ad::ParamSet m;
  ad::ParamSet v;
  std::int64_t t = 0;

  static AdamState zeros_like(const ad::ParamSet& params);
};

/// Decoupled weight decay Adam update. Returns false and leaves every input
/// unchanged when a gradient entry is non-finite.
bool optimizer_step(ad::ParamSet& params, const ad::ParamSet& grads, AdamState& adam, double lr,
                    const OptimConfig& cfg);

double global_norm(const ad::ParamSet& grads);
/// Scales grads so their global norm is at most `max_norm`; returns the norm
/// before clipping.
double clip_by_global_norm(ad::ParamSet& grads, double max_norm);

struct DropoutConfig {
  double p_vision_goal = 1.0;    // probability of keeping goal images
  double p_language_goal = 1.0;  // probability of keeping the text instruction

  void validate() const;
};

struct TaskKeep {
  bool vision = true;
  bool language = true;
};

TaskKeep draw_task_keep(const DropoutConfig& cfg, Rng& rng);
/// Removes the dropped goal modalities; the encoders then mask them.
void apply_task_keep(Observation& obs, TaskKeep keep);
/// One keep decision per trajectory, applied to every step of `window`.
TaskKeep apply_modality_dropout(std::vector<Transition>& window, const DropoutConfig& cfg, Rng& rng);

enum class Objective { q, v };

struct TrainConfig {
  OptimConfig optim;
  LossWeights loss;
  ValueBins bins;
  DropoutConfig dropout;
  Objective objective = Objective::q;
  GroupWeights group_weights;
  bool filter_success = false;
  std::string preset;
  std::vector<std::string> low_quality_groups;
  std::uint64_t seed = 0;
  std::int64_t steps = 1000;
  /// Step at which the learning-rate schedule restarts (used by finetuning).
  std::int64_t schedule_origin = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Sets the objective fields of a named variant: bc+q, filteredbc, pac,
/// alpha-pac or pac+v. alpha-pac treats groups listed in low_quality_groups,
/// or with data success rate below one half, as low quality.
void apply_preset(const std::string& name, TrainConfig& cfg, const EpisodeStore& store);
std::vector<std::string> preset_names();

struct TrainingRun {
  ModelState model;
  AdamState adam;
  Rng rng;
};

TrainingRun make_training_run(const ActorCritic& model, std::uint64_t seed);

struct MetricsRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double rl_term = 0.0;
  double bc_term = 0.0;
  double td_term = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool applied = true;

  nlohmann::json to_json() const;
};

/// Runs `steps` optimisation iterations. Each record is also written as one
/// JSON line to `metrics` when non-null. Throws TrainingError on a
/// non-finite loss.
std::vector<MetricsRecord> train(const ActorCritic& model, TrainingRun& run, const TrajectorySampler& sampler,
                                 const TrainConfig& cfg, std::int64_t steps, std::ostream* metrics = nullptr);

/// Sampler over `store` honouring cfg.filter_success and cfg.group_weights.
TrajectorySampler make_sampler(const EpisodeStore& store, const TrainConfig& cfg);

/// Flat `key = value` file with `#` comments.
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);
std::map<std::string, std::string> parse_config_text(const std::string& text);

struct Checkpoint {
  nlohmann::json model_config;
  nlohmann::json train_config;
  nlohmann::json extra;
  TrainingRun run;
};

/// Single-file checkpoint: magic, format version, JSON manifest, float64
/// little-endian payload and a trailing crc32.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Parameter export: `<prefix>.json` manifest (name, shape, offset) and a
/// little-endian float32 `<prefix>.bin` payload.
void export_parameters_f32(const std::filesystem::path& prefix, const ad::ParamSet& params);
ad::ParamSet import_parameters_f32(const std::filesystem::path& prefix);

}  // namespace pac

#endif  // PAC_TRAINING_HPP
