// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/scaling.hpp"

#include "pac/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pac {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> log_space(double lo, double hi, int n) {
  if (!(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("range must satisfy 0 < lo <= hi");
  if (n < 1) throw std::invalid_argument("need at least one grid point");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : double(i) / (n - 1);
    out[std::size_t(i)] = std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)));
  }
  out.back() = n == 1 ? lo : hi;
  return out;
}

}  // namespace

double ReturnProfile::predict(double step) const { return a * sigmoid(k * (step - n0)) + b; }

nlohmann::json ReturnProfile::to_json() const {
  return {{"name", name},         {"a", a},
          {"k", k},               {"n0", n0},
          {"b", b},               {"flops_per_step", flops_per_step},
          {"tokens_per_step", tokens_per_step}, {"model_params", model_params},
          {"min_step", min_step}, {"max_step", max_step},
          {"rss", rss},           {"degenerate", degenerate}};
}

ReturnProfile fit_return_profile(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 4) throw std::invalid_argument("fit_return_profile: need at least 4 points");
  const int n = static_cast<int>(points.size());
  Eigen::VectorXd x(n);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i) = points[std::size_t(i)].first;
    y(i) = points[std::size_t(i)].second;
    if (!std::isfinite(x(i)) || !std::isfinite(y(i))) throw std::invalid_argument("fit_return_profile: non-finite point");
  }
  ReturnProfile p;
  p.min_step = x.minCoeff();
  p.max_step = x.maxCoeff();
  const double mean = y.mean();
  const double rss_const = (y.array() - mean).square().sum();
  const double center = median(std::vector<double>(x.data(), x.data() + n));
  const double range = p.max_step - p.min_step;
  auto constant = [&] {
    p.a = 0.0;
    p.b = mean;
    p.n0 = center;
    p.k = range > 0 ? 4.0 / range : 0.0;
    p.rss = rss_const;
    p.degenerate = true;
    return p;
  };
  const double spread = y.maxCoeff() - y.minCoeff();
  if (range <= 0.0 || spread <= 1e-12 * std::max(1.0, std::abs(mean))) return constant();

  // Fit in normalised steps u = (n - center) / range: theta = (a, kappa, m, b).
  const Eigen::VectorXd u = (x.array() - center) / range;
  Eigen::Vector4d theta(spread, 4.0, 0.0, y.minCoeff());
  auto residuals = [&](const Eigen::Vector4d& t) {
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) r(i) = y(i) - (t(0) * sigmoid(t(1) * (u(i) - t(2))) + t(3));
    return r;
  };
  Eigen::VectorXd r = residuals(theta);
  double rss = r.squaredNorm();
  double lambda = 1e-3;
  for (int it = 0; it < 2000 && lambda < 1e12; ++it) {
    Eigen::MatrixXd jac(n, 4);
    for (int i = 0; i < n; ++i) {
      const double d = u(i) - theta(2);
      const double s = sigmoid(theta(1) * d);
      const double ds = s * (1.0 - s);
      jac(i, 0) = s;
      jac(i, 1) = theta(0) * ds * d;
      jac(i, 2) = -theta(0) * ds * theta(1);
      jac(i, 3) = 1.0;
    }
    const Eigen::Matrix4d jtj = jac.transpose() * jac;
    const Eigen::Vector4d g = jac.transpose() * r;
    Eigen::Matrix4d damped = jtj;
    for (int d = 0; d < 4; ++d) damped(d, d) += lambda * std::max(jtj(d, d), 1e-12);
    const Eigen::Vector4d delta = damped.ldlt().solve(g);
    const Eigen::Vector4d cand = theta + delta;
    const Eigen::VectorXd rc = residuals(cand);
    const double rss_c = rc.squaredNorm();
    if (std::isfinite(rss_c) && rss_c < rss) {
      const double gain = rss - rss_c;
      theta = cand;
      r = rc;
      rss = rss_c;
      lambda = std::max(lambda / 10.0, 1e-12);
      if (gain <= 1e-15 * std::max(rss, 1e-300) || delta.norm() < 1e-14 * (1.0 + theta.norm())) break;
    } else {
      lambda *= 10.0;
    }
  }
  if (!(rss <= rss_const) || !theta.allFinite()) return constant();
  p.a = theta(0);
  p.k = theta(1) / range;
  p.n0 = center + theta(2) * range;
  p.b = theta(3);
  p.rss = rss;
  p.degenerate = false;
  return p;
}

std::vector<EnvelopePoint> envelope(const std::vector<ReturnProfile>& profiles, std::pair<double, double> flop_range,
                                    int n_points) {
  if (profiles.empty()) throw std::invalid_argument("envelope: no profiles");
  for (const auto& p : profiles) {
    if (!(p.flops_per_step > 0.0)) throw std::invalid_argument("envelope: flops_per_step must be positive");
  }
  std::vector<EnvelopePoint> out;
  for (const double c : log_space(flop_range.first, flop_range.second, n_points)) {
    EnvelopePoint e;
    e.flops = c;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
      const double steps = c / profiles[i].flops_per_step;
      const double r = profiles[i].predict(steps);
      if (e.best_model < 0 || r > e.best_return) {
        e.best_return = r;
        e.best_model = static_cast<int>(i);
        e.steps = steps;
      }
    }
    const auto& best = profiles[std::size_t(e.best_model)];
    e.params = best.model_params;
    e.tokens = e.steps * best.tokens_per_step;
    out.push_back(e);
  }
  return out;
}

nlohmann::json PowerLawFit::to_json() const {
  return {{"N0", n0}, {"a_exp", a_exp}, {"D0", d0}, {"b_exp", b_exp},
          {"n_residuals", n_residuals}, {"d_residuals", d_residuals}};
}

namespace {

// y = intercept + slope * x; returns (intercept, slope, residuals).
std::tuple<double, double, std::vector<double>> ols(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;
  std::vector<double> res(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) res[i] = y[i] - (intercept + slope * x[i]);
  return {intercept, slope, res};
}

}  // namespace

PowerLawFit fit_power_laws(const std::vector<ComputePoint>& points) {
  std::set<double> distinct;
  std::vector<double> lc;
  std::vector<double> ln;
  std::vector<double> ld;
  for (const auto& p : points) {
    if (!(p.compute > 0.0 && p.params > 0.0 && p.tokens > 0.0)) {
      throw std::invalid_argument("fit_power_laws: C, N and D must be positive");
    }
    distinct.insert(p.compute);
    lc.push_back(std::log(p.compute));
    ln.push_back(std::log(p.params));
    ld.push_back(std::log(p.tokens));
  }
  if (distinct.size() < 2) throw std::invalid_argument("fit_power_laws: need at least 2 distinct compute values");
  PowerLawFit f;
  auto [in, sn, rn] = ols(lc, ln);
  auto [id, sd, rd] = ols(lc, ld);
  f.n0 = std::exp(in);
  f.a_exp = sn;
  f.d0 = std::exp(id);
  f.b_exp = sd;
  f.n_residuals = std::move(rn);
  f.d_residuals = std::move(rd);
  return f;
}

nlohmann::json IsoReturnGrid::to_json() const {
  nlohmann::json c = nlohmann::json::array();
  for (std::size_t l = 0; l < levels.size(); ++l) {
    nlohmann::json line = nlohmann::json::array();
    for (const auto& [p, f] : contours[l]) line.push_back({p, f});
    c.push_back({{"level", levels[l]}, {"points", line}});
  }
  return {{"params", params}, {"flops", flops}, {"value", value}, {"extrapolated", extrapolated}, {"contours", c}};
}

std::string IsoReturnGrid::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "params,flops,return,extrapolated\n";
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < flops.size(); ++j) {
      os << params[i] << ',' << flops[j] << ',' << value[i][j] << ',' << (extrapolated[i][j] ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

IsoReturnGrid iso_return_grid(const std::vector<ReturnProfile>& profiles, std::pair<double, double> param_range,
                              std::pair<double, double> flop_range, const std::vector<double>& levels, int n_params,
                              int n_flops) {
  if (profiles.empty()) throw std::invalid_argument("iso_return_grid: no profiles");
  std::vector<std::size_t> order(profiles.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto& p : profiles) {
    if (!(p.model_params > 0.0 && p.flops_per_step > 0.0)) {
      throw std::invalid_argument("iso_return_grid: profiles need positive params and flops_per_step");
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return profiles[a].model_params < profiles[b].model_params; });

  IsoReturnGrid g;
  g.params = log_space(param_range.first, param_range.second, n_params);
  g.flops = log_space(flop_range.first, flop_range.second, n_flops);
  g.levels = levels;
  const double p_min = profiles[order.front()].model_params;
  const double p_max = profiles[order.back()].model_params;
  auto eval = [&](const ReturnProfile& p, double c, bool& extra) {
    const double steps = c / p.flops_per_step;
    if (steps < p.min_step || steps > p.max_step) extra = true;
    return p.predict(steps);
  };
  for (const double n : g.params) {
    std::vector<double> row;
    std::vector<bool> flags;
    for (const double c : g.flops) {
      bool extra = n < p_min || n > p_max;
      double v = 0.0;
      if (n <= p_min) {
        v = eval(profiles[order.front()], c, extra);
      } else if (n >= p_max) {
        v = eval(profiles[order.back()], c, extra);
      } else {
        std::size_t j = 0;
        while (profiles[order[j + 1]].model_params < n) ++j;
        const auto& lo = profiles[order[j]];
        const auto& hi = profiles[order[j + 1]];
        const double t = (std::log(n) - std::log(lo.model_params)) / (std::log(hi.model_params) - std::log(lo.model_params));
        v = (1.0 - t) * eval(lo, c, extra) + t * eval(hi, c, extra);
      }
      row.push_back(v);
      flags.push_back(extra);
    }
    g.value.push_back(std::move(row));
    g.extrapolated.push_back(std::move(flags));
  }
  for (const double level : levels) {
    std::vector<std::pair<double, double>> line;
    for (std::size_t i = 0; i < g.params.size(); ++i) {
      const auto& v = g.value[i];
      for (std::size_t j = 0; j + 1 < v.size(); ++j) {
        const double d0 = v[j] - level;
        const double d1 = v[j + 1] - level;
        if (d0 == 0.0) {
          line.emplace_back(g.params[i], g.flops[j]);
          break;
        }
        if (d0 * d1 < 0.0 || d1 == 0.0) {
          const double t = d0 / (d0 - d1);
          const double lc = std::log(g.flops[j]) + t * (std::log(g.flops[j + 1]) - std::log(g.flops[j]));
          line.emplace_back(g.params[i], std::exp(lc));
          break;
        }
      }
    }
    g.contours.push_back(std::move(line));
  }
  return g;
}

double attention_block_flops(double lq, double lkv, double d, double d_kv, int widening, int heads, double maf) {
  const double q_proj = maf * lq * d * d;
  const double kv_proj = 2.0 * maf * lkv * d_kv * d;
  const double logits = maf * lq * lkv * d;
  const double softmax = 3.0 * heads * lq * lkv;
  const double reduce = maf * lq * lkv * d;
  const double out_proj = maf * lq * d * d;
  const double mlp = 2.0 * maf * lq * d * (widening * d);
  return q_proj + kv_proj + logits + softmax + reduce + out_proj + mlp;
}

FlopArch FlopArch::scale(const std::string& name) {
  FlopArch a;
  if (name == "XXS") {
    a.latent_dim = 768, a.n_blocks = 4, a.widening = 1;
  } else if (name == "XS") {
    a.latent_dim = 1024, a.n_blocks = 8, a.widening = 1;
  } else if (name == "S") {
    a.latent_dim = 1280, a.n_blocks = 10, a.widening = 2;
  } else if (name == "M") {
    a.latent_dim = 1536, a.n_blocks = 12, a.widening = 4;
  } else if (name == "L") {
    a.latent_dim = 2048, a.n_blocks = 18, a.widening = 4;
  } else {
    throw ConfigError("unknown model scale: " + name);
  }
  a.n_heads = a.latent_dim / 64;
  return a;
}

FlopArch FlopArch::from_model(const ArchConfig& arch, const ModalitySpec& spec) {
  FlopArch a;
  a.n_proprio = spec.n_proprio;
  a.n_images = spec.n_images;
  a.n_goal_images = spec.n_goal_images;
  a.n_text_tokens = spec.n_text_tokens;
  a.n_action_dims = spec.n_action_dims;
  a.n_gains = spec.n_gains();
  a.visual_tokens = spec.n_images + spec.n_goal_images > 0 ? spec.tokens_per_image() : 0;
  a.vocab_size = spec.vocab_size;
  a.n_latents = arch.n_latents;
  a.latent_dim = arch.latent_dim;
  a.n_blocks = arch.n_blocks;
  a.widening = arch.widening;
  a.n_heads = arch.n_heads;
  a.n_action_bins = arch.n_action_bins;
  a.n_value_bins = arch.n_value_bins;
  a.embed_dim = spec.embed_dim;
  if (a.visual_tokens > 0) {
    int h = spec.image_height;
    int w = spec.image_width;
    int in = spec.image_channels;
    for (const int out : spec.conv.channels) {
      h = ad::conv_output_size(h, spec.conv.kernel, spec.conv.stride);
      w = ad::conv_output_size(w, spec.conv.kernel, spec.conv.stride);
      a.convs.push_back({in, out, spec.conv.kernel, spec.conv.kernel, h, w});
      in = out;
    }
  }
  return a;
}

std::optional<double> published_fwd(const std::string& scale) {
  static const std::map<std::string, double> table = {
      {"XXS", 7.826e9}, {"XS", 1.360e10}, {"S", 2.341e10}, {"M", 4.380e10}, {"L", 1.040e11}};
  const auto it = table.find(scale);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> scale_names() { return {"XXS", "XS", "S", "M", "L"}; }

double FlopModel::fwd() const {
  if (fwd_override) return *fwd_override;
  return enc_p + enc_v + enc_l + enc_a + xattn_in + n_blocks * sattn_proc + xattn_pi + xattn_q;
}

nlohmann::json FlopModel::to_json() const {
  return {{"ENC_P", enc_p},     {"ENC_V", enc_v},         {"ENC_L", enc_l},   {"ENC_A", enc_a},
          {"XATTN_IN", xattn_in}, {"SATTN_PROC", sattn_proc}, {"M", n_blocks}, {"XATTN_PI", xattn_pi},
          {"XATTN_Q", xattn_q}, {"MAF", maf},             {"B", batch},       {"f", target_period},
          {"FWD", fwd()},       {"BWD", bwd()},           {"UPDATE", update()},
          {"fwd_overridden", fwd_override.has_value()}};
}

FlopModel count_flops(const FlopArch& a, int batch, int target_period, std::optional<double> fwd_override) {
  if (batch < 1 || target_period < 1) throw std::invalid_argument("count_flops: batch and target period must be >= 1");
  FlopModel m;
  m.batch = batch;
  m.target_period = target_period;
  m.n_blocks = a.n_blocks;
  m.fwd_override = fwd_override;
  const double maf = m.maf;
  const double di = a.embed_dim;
  const double dz = a.latent_dim;
  double resnet = 0.0;
  for (const auto& c : a.convs) {
    resnet += double(c.in_channels) * c.out_channels * (c.kernel_h * c.kernel_w) * (c.out_h * c.out_w) * maf;
  }
  resnet *= a.n_images + a.n_goal_images;
  m.enc_p = maf * a.proprio_tokens() * di;
  m.enc_v = maf * a.vision_tokens() * di + resnet;
  m.enc_l = maf * a.n_text_tokens * double(a.vocab_size) * di;
  m.enc_a = maf * a.action_tokens() * di;
  m.xattn_in = attention_block_flops(a.n_latents, a.input_tokens(), dz, di, a.widening, a.n_heads, maf);
  m.sattn_proc = attention_block_flops(a.n_latents, a.n_latents, dz, dz, a.widening, a.n_heads, maf);
  m.xattn_pi = attention_block_flops(a.n_action_dims, a.n_latents, dz, dz, a.widening, a.n_heads, maf) +
               maf * a.n_action_dims * dz * a.n_action_bins;
  m.xattn_q = attention_block_flops(1, a.n_latents, dz, dz, a.widening, a.n_heads, maf) + maf * dz * a.n_value_bins;
  return m;
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw ConfigError("empty csv: " + path.string());
  return rows;
}

double to_number(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("not a number '" + s + "' in " + path.string());
  }
}

std::map<std::string, std::size_t> header_index(const std::vector<std::string>& header) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < header.size(); ++i) idx[header[i]] = i;
  return idx;
}

}  // namespace

std::vector<ReturnProfile> load_profiles(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.csv";
  const auto rows = read_csv(manifest_path);
  const auto col = header_index(rows.front());
  for (const char* need : {"model", "params", "flops_per_step"}) {
    if (!col.count(need)) throw ConfigError(std::string("manifest.csv lacks column ") + need);
  }
  const bool has_tokens = col.count("tokens_per_step") > 0;
  std::vector<ReturnProfile> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != rows.front().size()) throw ConfigError("manifest.csv row " + std::to_string(r) + " has wrong width");
    const std::string model = row[col.at("model")];
    const auto profile_path = dir / (model + ".csv");
    const auto data = read_csv(profile_path);
    const auto pcol = header_index(data.front());
    if (!pcol.count("step") || !pcol.count("avg_return")) {
      throw ConfigError(profile_path.string() + " needs header step,avg_return");
    }
    std::vector<std::pair<double, double>> points;
    for (std::size_t i = 1; i < data.size(); ++i) {
      if (data[i].size() != data.front().size()) throw ConfigError(profile_path.string() + ": ragged row");
      points.emplace_back(to_number(data[i][pcol.at("step")], profile_path),
                          to_number(data[i][pcol.at("avg_return")], profile_path));
    }
    ReturnProfile p = fit_return_profile(points);
    p.name = model;
    p.model_params = to_number(row[col.at("params")], manifest_path);
    p.flops_per_step = to_number(row[col.at("flops_per_step")], manifest_path);
    if (has_tokens) p.tokens_per_step = to_number(row[col.at("tokens_per_step")], manifest_path);
    out.push_back(std::move(p));
  }
  if (out.empty()) throw ConfigError("manifest.csv lists no models");
  return out;
}

}  // namespace pac
