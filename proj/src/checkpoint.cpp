// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/errors.hpp"
#include "pac/training.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pac {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'C', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xffu));
}

template <typename T>
T get_le(const unsigned char* p) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= U(p[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

void append_tensors(const std::string& group, const ad::ParamSet& set, nlohmann::json& manifest,
                    std::vector<unsigned char>& payload) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& m = set.value(i);
    manifest.push_back({{"group", group},
                        {"name", set.name(i)},
                        {"shape", {m.rows(), m.cols()}},
                        {"offset", payload.size()},
                        {"dtype", "f64"}});
    // Row-major element order.
    for (ad::Index r = 0; r < m.rows(); ++r) {
      for (ad::Index c = 0; c < m.cols(); ++c) put_le<double>(payload, m(r, c));
    }
  }
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<unsigned char> payload;
  append_tensors("params", ckpt.run.model.params, tensors, payload);
  append_tensors("target", ckpt.run.model.target, tensors, payload);
  if (ckpt.run.model.reference) append_tensors("reference", *ckpt.run.model.reference, tensors, payload);
  append_tensors("adam.m", ckpt.run.adam.m, tensors, payload);
  append_tensors("adam.v", ckpt.run.adam.v, tensors, payload);
  const nlohmann::json manifest = {{"model", ckpt.model_config},
                                   {"train", ckpt.train_config},
                                   {"extra", ckpt.extra},
                                   {"step", ckpt.run.model.step},
                                   {"adam_t", ckpt.run.adam.t},
                                   {"rng", ckpt.run.rng.state()},
                                   {"has_reference", ckpt.run.model.reference.has_value()},
                                   {"payload_bytes", payload.size()},
                                   {"tensors", tensors}};
  const std::string text = manifest.dump();
  std::vector<unsigned char> bytes(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(bytes, kCheckpointVersion);
  put_le<std::uint64_t>(bytes, text.size());
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  const auto crc = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
  put_le<std::uint32_t>(bytes, crc);
  write_file(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = read_file(path);
  constexpr std::size_t header = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < header + 4) throw IntegrityError("checkpoint truncated: " + path.string());
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw IntegrityError("not a checkpoint: " + path.string());
  const auto stored_crc = get_le<std::uint32_t>(bytes.data() + bytes.size() - 4);
  const auto crc = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4)));
  const auto version = get_le<std::uint32_t>(bytes.data() + sizeof(kMagic));
  if (crc != stored_crc) throw IntegrityError("checkpoint checksum mismatch: " + path.string());
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  const auto manifest_len = get_le<std::uint64_t>(bytes.data() + sizeof(kMagic) + 4);
  if (header + manifest_len + 4 > bytes.size()) throw IntegrityError("checkpoint manifest truncated");
  const unsigned char* payload = bytes.data() + header + manifest_len;
  const std::size_t payload_size = bytes.size() - 4 - header - manifest_len;

  Checkpoint ckpt;
  try {
    const auto manifest =
        nlohmann::json::parse(bytes.begin() + std::ptrdiff_t(header), bytes.begin() + std::ptrdiff_t(header + manifest_len));
    if (manifest.at("payload_bytes").get<std::size_t>() != payload_size) {
      throw IntegrityError("checkpoint payload size mismatch");
    }
    ckpt.model_config = manifest.at("model");
    ckpt.train_config = manifest.at("train");
    ckpt.extra = manifest.at("extra");
    ckpt.run.model.step = manifest.at("step");
    ckpt.run.adam.t = manifest.at("adam_t");
    ckpt.run.rng.set_state(manifest.at("rng").get<std::string>());
    std::map<std::string, ad::ParamSet> groups;
    for (const auto& t : manifest.at("tensors")) {
      const ad::Index rows = t.at("shape").at(0);
      const ad::Index cols = t.at("shape").at(1);
      const std::size_t offset = t.at("offset");
      if (offset + std::size_t(rows * cols) * 8 > payload_size) throw IntegrityError("checkpoint tensor out of range");
      ad::Matrix m(rows, cols);
      const unsigned char* p = payload + offset;
      for (ad::Index r = 0; r < rows; ++r) {
        for (ad::Index c = 0; c < cols; ++c, p += 8) m(r, c) = get_le<double>(p);
      }
      groups[t.at("group")].add(t.at("name"), std::move(m));
    }
    ckpt.run.model.params = std::move(groups["params"]);
    ckpt.run.model.target = std::move(groups["target"]);
    if (manifest.at("has_reference").get<bool>()) ckpt.run.model.reference = std::move(groups["reference"]);
    ckpt.run.adam.m = std::move(groups["adam.m"]);
    ckpt.run.adam.v = std::move(groups["adam.v"]);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint manifest invalid: ") + e.what());
  }
  if (!ckpt.run.model.params.same_structure(ckpt.run.model.target) ||
      !ckpt.run.model.params.same_structure(ckpt.run.adam.m) || !ckpt.run.model.params.same_structure(ckpt.run.adam.v)) {
    throw IntegrityError("checkpoint tensor groups disagree");
  }
  return ckpt;
}

void export_parameters_f32(const std::filesystem::path& prefix, const ad::ParamSet& params) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<unsigned char> payload;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& m = params.value(i);
    tensors.push_back({{"name", params.name(i)}, {"shape", {m.rows(), m.cols()}}, {"offset", payload.size()}});
    for (ad::Index r = 0; r < m.rows(); ++r) {
      for (ad::Index c = 0; c < m.cols(); ++c) put_le<float>(payload, static_cast<float>(m(r, c)));
    }
  }
  const nlohmann::json manifest = {{"dtype", "f32"}, {"endianness", "little"}, {"tensors", tensors}};
  const std::string text = manifest.dump(2);
  write_file(std::filesystem::path(prefix.string() + ".json"), std::vector<unsigned char>(text.begin(), text.end()));
  write_file(std::filesystem::path(prefix.string() + ".bin"), payload);
}

ad::ParamSet import_parameters_f32(const std::filesystem::path& prefix) {
  const auto text = read_file(std::filesystem::path(prefix.string() + ".json"));
  const auto payload = read_file(std::filesystem::path(prefix.string() + ".bin"));
  ad::ParamSet out;
  try {
    const auto manifest = nlohmann::json::parse(text.begin(), text.end());
    std::size_t expected = 0;
    for (const auto& t : manifest.at("tensors")) {
      const ad::Index rows = t.at("shape").at(0);
      const ad::Index cols = t.at("shape").at(1);
      const std::size_t offset = t.at("offset");
      if (offset != expected || offset + std::size_t(rows * cols) * 4 > payload.size()) {
        throw IntegrityError("parameter payload truncated");
      }
      ad::Matrix m(rows, cols);
      const unsigned char* p = payload.data() + offset;
      for (ad::Index r = 0; r < rows; ++r) {
        for (ad::Index c = 0; c < cols; ++c, p += 4) m(r, c) = get_le<float>(p);
      }
      expected = offset + std::size_t(rows * cols) * 4;
      out.add(t.at("name"), std::move(m));
    }
    if (expected != payload.size()) throw IntegrityError("parameter payload has trailing bytes");
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("parameter manifest invalid: ") + e.what());
  }
  return out;
}

}  // namespace pac
