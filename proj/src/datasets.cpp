// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/datasets.hpp"

#include "pac/errors.hpp"

#include "json.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

namespace pac {

namespace {

constexpr const char* kStoreFormat = "pac-episode-store";
constexpr int kStoreVersion = 1;

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

void put_f32(std::vector<unsigned char>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xffu));
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

nlohmann::json image_shapes(const std::vector<Image>& images) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& im : images) out.push_back({im.height, im.width, im.channels});
  return out;
}

nlohmann::json step_layout(const EpisodeStep& s) {
  return {{"proprio", s.obs.proprio.size()},
          {"images", image_shapes(s.obs.images)},
          {"goal_images", image_shapes(s.obs.goal_images)},
          {"text", s.obs.text_tokens.size()},
          {"action", s.action.size()}};
}

struct Reader {
  const unsigned char* p;
  const unsigned char* end;
  float next() {
    if (p + 4 > end) throw IntegrityError("episode store: payload record too short");
    const float v = get_f32(p);
    p += 4;
    return v;
  }
};

std::vector<Image> read_images(Reader& r, const nlohmann::json& shapes) {
  std::vector<Image> out;
  for (const auto& s : shapes) {
    Image im;
    im.height = s.at(0);
    im.width = s.at(1);
    im.channels = s.at(2);
    im.pixels.resize(std::size_t(im.height) * im.width * im.channels);
    for (float& v : im.pixels) v = r.next();
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace

void EpisodeRecord::validate() const {
  if (steps.empty()) throw std::invalid_argument("EpisodeRecord: episode has no steps");
  for (const auto& s : steps) {
    if (!std::isfinite(s.reward)) throw std::invalid_argument("EpisodeRecord: non-finite reward");
  }
}

EpisodeStore::EpisodeStore(std::vector<EpisodeRecord> episodes) : episodes_(std::move(episodes)) {
  for (const auto& e : episodes_) e.validate();
}

void EpisodeStore::append_round(std::vector<EpisodeRecord> episodes, int round_id) {
  if (round_id <= last_round()) {
    throw ConfigError("append_round: round id " + std::to_string(round_id) + " is not greater than " +
                      std::to_string(last_round()));
  }
  for (auto& e : episodes) {
    e.validate();
    e.source_round = round_id;
  }
  for (auto& e : episodes) episodes_.push_back(std::move(e));
}

int EpisodeStore::last_round() const {
  int r = 0;
  for (const auto& e : episodes_) r = std::max(r, e.source_round);
  return r;
}

std::size_t EpisodeStore::count_in_round(int round_id) const {
  return static_cast<std::size_t>(
      std::count_if(episodes_.begin(), episodes_.end(), [&](const EpisodeRecord& e) { return e.source_round == round_id; }));
}

std::vector<std::string> EpisodeStore::groups() const {
  std::set<std::string> g;
  for (const auto& e : episodes_) g.insert(e.group_id);
  return {g.begin(), g.end()};
}

StoreView::StoreView(const EpisodeStore& store, std::vector<std::size_t> indices)
    : store_(&store), indices_(std::move(indices)) {
  for (std::size_t i : indices_) {
    if (i >= store.size()) throw std::out_of_range("StoreView: index out of range");
  }
}

StoreView StoreView::all(const EpisodeStore& store) {
  std::vector<std::size_t> idx(store.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return StoreView(store, std::move(idx));
}

StoreView filter_success(const EpisodeStore& store) {
  std::map<std::string, std::size_t> successes;
  for (const auto& g : store.groups()) successes[g] = 0;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].success) {
      idx.push_back(i);
      ++successes[store[i].group_id];
    }
  }
  for (const auto& [g, n] : successes) {
    if (n == 0) throw ConfigError("filter_success: group '" + g + "' has no successful episodes");
  }
  if (idx.empty()) throw ConfigError("filter_success: store has no successful episodes");
  return StoreView(store, std::move(idx));
}

void write_store(const std::filesystem::path& prefix, const std::vector<EpisodeRecord>& episodes) {
  std::ofstream manifest(with_suffix(prefix, ".manifest.jsonl"), std::ios::binary | std::ios::trunc);
  std::ofstream payload(with_suffix(prefix, ".payload.bin"), std::ios::binary | std::ios::trunc);
  if (!manifest || !payload) throw std::runtime_error("write_store: cannot open " + prefix.string());
  manifest << nlohmann::json{{"format", kStoreFormat}, {"version", kStoreVersion}, {"episodes", episodes.size()}}.dump()
           << '\n';
  std::uint64_t offset = 0;
  std::vector<unsigned char> buf;
  for (const auto& e : episodes) {
    e.validate();
    const nlohmann::json layout = step_layout(e.steps.front());
    buf.clear();
    for (const auto& s : e.steps) {
      if (step_layout(s) != layout) throw std::invalid_argument("write_store: step layout varies within an episode");
      for (float v : s.obs.proprio) put_f32(buf, v);
      for (const auto& im : s.obs.images) for (float v : im.pixels) put_f32(buf, v);
      for (const auto& im : s.obs.goal_images) for (float v : im.pixels) put_f32(buf, v);
      for (int t : s.obs.text_tokens) put_f32(buf, static_cast<float>(t));
      for (float v : s.action) put_f32(buf, v);
      put_f32(buf, s.reward);
    }
    const auto crc = crc32(0L, buf.data(), static_cast<uInt>(buf.size()));
    manifest << nlohmann::json{{"task_id", e.task_id},
                               {"group_id", e.group_id},
                               {"success", e.success},
                               {"round", e.source_round},
                               {"terminated", e.terminated},
                               {"steps", e.steps.size()},
                               {"offset", offset},
                               {"bytes", buf.size()},
                               {"crc32", crc},
                               {"layout", layout}}
                    .dump()
             << '\n';
    payload.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    offset += buf.size();
  }
  if (!manifest || !payload) throw std::runtime_error("write_store: write failed for " + prefix.string());
}

std::vector<EpisodeRecord> read_store(const std::filesystem::path& prefix) {
  std::ifstream manifest(with_suffix(prefix, ".manifest.jsonl"), std::ios::binary);
  std::ifstream payload(with_suffix(prefix, ".payload.bin"), std::ios::binary);
  if (!manifest || !payload) throw std::runtime_error("read_store: cannot open " + prefix.string());
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(payload)), std::istreambuf_iterator<char>());

  std::string line;
  if (!std::getline(manifest, line)) throw IntegrityError("read_store: missing manifest header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw IntegrityError("read_store: malformed manifest header");
  }
  if (header.value("format", "") != kStoreFormat) throw IntegrityError("read_store: not an episode store");
  if (header.value("version", -1) != kStoreVersion) {
    throw VersionError("read_store: unsupported store version " + header.value("version", nlohmann::json()).dump());
  }
  const std::size_t n = header.at("episodes");
  std::vector<EpisodeRecord> out;
  out.reserve(n);
  std::uint64_t expected_offset = 0;
  try {
    while (std::getline(manifest, line)) {
      if (line.empty()) continue;
      const auto m = nlohmann::json::parse(line);
      const std::uint64_t offset = m.at("offset");
      const std::uint64_t bytes = m.at("bytes");
      if (offset != expected_offset || offset + bytes > data.size()) {
        throw IntegrityError("read_store: payload truncated or offsets inconsistent");
      }
      const unsigned char* p = data.data() + offset;
      if (crc32(0L, p, static_cast<uInt>(bytes)) != m.at("crc32").get<std::uint64_t>()) {
        throw IntegrityError("read_store: checksum mismatch");
      }
      EpisodeRecord e;
      e.task_id = m.at("task_id");
      e.group_id = m.at("group_id");
      e.success = m.at("success");
      e.source_round = m.at("round");
      e.terminated = m.at("terminated");
      const auto& layout = m.at("layout");
      const std::size_t steps = m.at("steps");
      Reader r{p, p + bytes};
      for (std::size_t t = 0; t < steps; ++t) {
        EpisodeStep s;
        s.obs.proprio.resize(layout.at("proprio"));
        for (float& v : s.obs.proprio) v = r.next();
        s.obs.images = read_images(r, layout.at("images"));
        s.obs.goal_images = read_images(r, layout.at("goal_images"));
        s.obs.text_tokens.resize(layout.at("text"));
        for (int& v : s.obs.text_tokens) v = static_cast<int>(r.next());
        s.action.resize(layout.at("action"));
        for (float& v : s.action) v = r.next();
        s.reward = r.next();
        e.steps.push_back(std::move(s));
      }
      if (r.p != r.end) throw IntegrityError("read_store: payload record length mismatch");
      expected_offset += bytes;
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IntegrityError(std::string("read_store: malformed manifest: ") + ex.what());
  }
  if (out.size() != n) throw IntegrityError("read_store: manifest episode count mismatch");
  if (expected_offset != data.size()) throw IntegrityError("read_store: payload has trailing bytes");
  return out;
}

TrajectorySampler::TrajectorySampler(StoreView view, const GroupWeights& weights) : view_(std::move(view)) {
  if (view_.size() == 0) throw ConfigError("TrajectorySampler: no episodes");
  std::map<std::string, std::map<std::string, std::vector<std::size_t>>> tree;
  for (std::size_t i = 0; i < view_.size(); ++i) tree[view_[i].group_id][view_[i].task_id].push_back(i);
  if (weights.empty()) {
    for (auto& [g, datasets] : tree) {
      group_names_.push_back(g);
      group_weights_.push_back(1.0);
    }
  } else {
    for (const auto& [g, w] : weights) {
      if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("TrajectorySampler: weight of group '" + g + "' must be positive");
      if (tree.find(g) == tree.end()) throw ConfigError("TrajectorySampler: group '" + g + "' has no episodes");
      group_names_.push_back(g);
      group_weights_.push_back(w);
    }
  }
  for (const auto& g : group_names_) {
    std::vector<std::vector<std::size_t>> datasets;
    for (auto& [task, eps] : tree.at(g)) datasets.push_back(eps);
    tree_.push_back(std::move(datasets));
  }
}

WindowRef TrajectorySampler::sample_ref(int length, Rng& rng) const {
  if (length < 1) throw std::invalid_argument("TrajectorySampler: window length must be >= 1");
  const std::size_t g = rng.categorical(group_weights_);
  const auto& datasets = tree_[g];
  const auto& eps = datasets[std::size_t(rng.below(datasets.size()))];
  WindowRef ref;
  ref.episode = eps[std::size_t(rng.below(eps.size()))];
  const int steps = static_cast<int>(view_[ref.episode].steps.size());
  const int starts = std::max(1, steps - length + 1);
  ref.start = static_cast<int>(rng.below(std::uint64_t(starts)));
  return ref;
}

std::vector<Transition> TrajectorySampler::window(const WindowRef& ref, int length) const {
  const EpisodeRecord& e = view_[ref.episode];
  const int steps = static_cast<int>(e.steps.size());
  std::vector<Transition> out(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) {
    const int t = std::min(ref.start + i, steps - 1);
    Transition& tr = out[std::size_t(i)];
    const EpisodeStep& s = e.steps[std::size_t(t)];
    tr.obs = s.obs;
    tr.action = s.action;
    tr.reward = s.reward;
    tr.group_id = e.group_id;
    tr.valid = ref.start + i < steps;
    if (t + 1 < steps) {
      tr.next_obs = e.steps[std::size_t(t + 1)].obs;
    } else {
      tr.next_obs = s.obs;
      tr.terminal = e.terminated;
      // A time-limit cut leaves no successor to bootstrap from.
      if (!e.terminated) tr.valid = false;
    }
  }
  return out;
}

std::vector<std::vector<Transition>> TrajectorySampler::sample(int batch, int length, Rng& rng) const {
  std::vector<std::vector<Transition>> out;
  out.reserve(std::size_t(batch));
  for (int b = 0; b < batch; ++b) out.push_back(window(sample_ref(length, rng), length));
  return out;
}

std::size_t TrajectorySampler::group_of(std::size_t view_index) const {
  const auto it = std::find(group_names_.begin(), group_names_.end(), view_[view_index].group_id);
  return static_cast<std::size_t>(it - group_names_.begin());
}

}  // namespace pac
