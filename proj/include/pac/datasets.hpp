// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_DATASETS_HPP
#define PAC_DATASETS_HPP

// Offline episode storage, success filtering and group-weighted sampling of
// fixed-length trajectory windows.

#include "pac/encoders.hpp"
#include "pac/objectives.hpp"
#include "pac/rng.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pac {

struct EpisodeStep {
  Observation obs;
  std::vector<float> action;
  float reward = 0.0f;

  friend bool operator==(const EpisodeStep&, const EpisodeStep&) = default;
};

struct EpisodeRecord {
  std::string task_id;
  std::string group_id;
  std::vector<EpisodeStep> steps;
  bool success = false;
  int source_round = 0;
  /// True when the last step led to an absorbing state; false when the
  /// episode was cut by a time limit and the last transition has no successor.
  bool terminated = true;

  /// Throws std::invalid_argument on an empty or non-finite episode.
  void validate() const;
  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

using GroupWeights = std::map<std::string, double>;

class EpisodeStore {
 public:
  EpisodeStore() = default;
  explicit EpisodeStore(std::vector<EpisodeRecord> episodes);

  std::size_t size() const { return episodes_.size(); }
  bool empty() const { return episodes_.empty(); }
  const EpisodeRecord& operator[](std::size_t i) const { return episodes_[i]; }
  const std::vector<EpisodeRecord>& episodes() const { return episodes_; }

  /// Appends episodes tagged with `round_id`, which must exceed every round
  /// already present. An empty batch leaves the store unchanged.
  void append_round(std::vector<EpisodeRecord> episodes, int round_id);
  int last_round() const;
  std::size_t count_in_round(int round_id) const;
  std::vector<std::string> groups() const;

 private:
  std::vector<EpisodeRecord> episodes_;
};

/// Read-only selection of episodes of a store. The store must outlive it.
class StoreView {
 public:
  StoreView() = default;
  StoreView(const EpisodeStore& store, std::vector<std::size_t> indices);
  static StoreView all(const EpisodeStore& store);

  std::size_t size() const { return indices_.size(); }
  const EpisodeRecord& operator[](std::size_t i) const { return (*store_)[indices_[i]]; }
  const std::vector<std::size_t>& indices() const { return indices_; }

 private:
  const EpisodeStore* store_ = nullptr;
  std::vector<std::size_t> indices_;
};

/// Successful episodes only. Throws ConfigError when any group present in
/// the store has no success.
StoreView filter_success(const EpisodeStore& store);

/// Writes `<prefix>.manifest.jsonl` and `<prefix>.payload.bin`.
void write_store(const std::filesystem::path& prefix, const std::vector<EpisodeRecord>& episodes);
/// Throws IntegrityError on checksum or size mismatch and VersionError on an
/// unknown format version.
std::vector<EpisodeRecord> read_store(const std::filesystem::path& prefix);

struct WindowRef {
  std::size_t episode = 0;  // index into the view
  int start = 0;
};

/// Hierarchical sampler: group with probability proportional to its weight,
/// then a dataset (task_id) uniformly within the group, then an episode
/// uniformly within the dataset, then a window start uniformly.
class TrajectorySampler {
 public:
  /// Empty `weights` means every group has weight 1. Throws ConfigError for
  /// non-positive weights or weighted groups without episodes.
  TrajectorySampler(StoreView view, const GroupWeights& weights);

  WindowRef sample_ref(int length, Rng& rng) const;
  /// `length` consecutive transitions from one episode. Positions past the
  /// end repeat the final step with valid = false.
  std::vector<Transition> window(const WindowRef& ref, int length) const;
  std::vector<std::vector<Transition>> sample(int batch, int length, Rng& rng) const;

  const std::vector<std::string>& group_names() const { return group_names_; }
  std::size_t group_of(std::size_t view_index) const;

 private:
  StoreView view_;
  std::vector<std::string> group_names_;
  std::vector<double> group_weights_;
  // group -> dataset -> episode indices into the view
  std::vector<std::vector<std::vector<std::size_t>>> tree_;
};

}  // namespace pac

#endif  // PAC_DATASETS_HPP
