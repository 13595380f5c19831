#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "symplect/diffnet/adam.hpp"
#include "symplect/errors.hpp"
#include "symplect/integrators.hpp"
#include "symplect/models.hpp"
#include "symplect/systems.hpp"

namespace symplect::training {

using diffnet::NetParams;
using models::ModelSpec;

// ---------------------------------------------------------------------------
// Datasets

struct DataCounts {
  int trajectories = 25;
  int samples = 30;  // states per trajectory, t_k = k h for k < samples
  double h = 0.1;
  double t_max = 3.0;
};

/// Training and testing parameters per system.
struct SystemDefaults {
  DataCounts counts;
  int hidden_layers = 2;
  int hidden_width = 200;
};

inline SystemDefaults table_defaults(SystemKind kind) {
  switch (kind) {
    case SystemKind::mass_spring: return {{25, 30, 0.1, 3.0}, 2, 200};
    case SystemKind::pendulum: return {{25, 30, 0.1, 3.0}, 2, 200};
    case SystemKind::two_body_grav: return {{20, 200, 0.1, 20.0}, 2, 300};
    case SystemKind::three_body_grav: return {{200, 20, 0.1, 2.0}, 2, 300};
    case SystemKind::n_body_spring: return {{100, 40, 0.1, 4.0}, 2, 300};
    case SystemKind::henon_heiles: return {{100, 20, 0.1, 2.0}, 2, 300};
  }
  throw ContractError("unknown system");
}

inline constexpr double kMaxNoiseToSignal = 0.3;

struct Dataset {
  SystemSpec system;
  DataCounts counts;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<Trajectory> clean;
  std::vector<Trajectory> noisy;
  std::vector<Matrix> noise;  // per trajectory, 2n x samples: columns are [dq; dp] draws
  std::vector<int> train_indices;

  [[nodiscard]] double noise_to_signal() const;
  [[nodiscard]] nlohmann::json manifest() const;
};

inline double rms_of_states(const std::vector<Trajectory>& trs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& tr : trs) {
    for (const auto& s : tr.states) {
      sum += s.q.squaredNorm() + s.p.squaredNorm();
      n += static_cast<std::size_t>(s.q.size() + s.p.size());
    }
  }
  return n == 0 ? 0.0 : std::sqrt(sum / static_cast<double>(n));
}

inline double Dataset::noise_to_signal() const {
  const double rms = rms_of_states(clean);
  return rms > 0 ? sigma / rms : 0.0;
}

inline nlohmann::json Dataset::manifest() const {
  nlohmann::json j;
  j["system"] = models::system_to_json(system);
  j["h"] = counts.h;
  j["T"] = counts.h * (counts.samples - 1);
  j["t_max"] = counts.t_max;
  j["trajectories"] = counts.trajectories;
  j["samples"] = counts.samples;
  j["seed"] = seed;
  j["sigma"] = sigma;
  j["noise_to_signal"] = noise_to_signal();
  j["ground_truth"] = "rk4 substep refinement";
  return j;
}

/// Ground-truth trajectories with additive N(0, sigma^2) noise on every entry
/// of every state. Deterministic given seed.
inline Dataset generate_dataset(const SystemSpec& spec, const DataCounts& counts, double sigma, std::uint64_t seed) {
  validate(spec);
  if (counts.trajectories < 1 || counts.samples < 2 || !(counts.h > 0)) {
    throw ConfigError("dataset needs at least one trajectory of two states and h > 0");
  }
  if (!(sigma >= 0)) throw ConfigError("sigma must be non-negative");
  Dataset d;
  d.system = spec;
  d.counts = counts;
  d.sigma = sigma;
  d.seed = seed;
  Rng rng(seed);
  const double T = counts.h * (counts.samples - 1);
  for (int i = 0; i < counts.trajectories; ++i) {
    try {
      const PhaseState s0 = sample_initial(spec, rng);
      d.clean.push_back(ground_truth(spec, s0, counts.h, T));
    } catch (const SamplerError& e) {
      throw SamplerError("trajectory " + std::to_string(i) + ": " + e.what());
    } catch (const SingularityError& e) {
      throw SingularityError("trajectory " + std::to_string(i) + ": " + e.what());
    } catch (const PrecisionError& e) {
      throw PrecisionError("trajectory " + std::to_string(i) + ": " + e.what());
    }
    d.train_indices.push_back(i);
  }
  std::normal_distribution<double> nd(0.0, 1.0);
  const int n = spec.size();
  for (const auto& tr : d.clean) {
    Trajectory noisy = tr;
    noisy.noisy = sigma > 0;
    Matrix draws = Matrix::Zero(2 * n, static_cast<Eigen::Index>(tr.size()));
    if (sigma > 0) {
      for (std::size_t k = 0; k < tr.size(); ++k) {
        const auto c = static_cast<Eigen::Index>(k);
        for (int a = 0; a < 2 * n; ++a) draws(a, c) = sigma * nd(rng);
        noisy.states[k].q = tr.states[k].q + draws.col(c).head(n);
        noisy.states[k].p = tr.states[k].p + draws.col(c).tail(n);
      }
    }
    d.noisy.push_back(std::move(noisy));
    d.noise.push_back(std::move(draws));
  }
  if (sigma > 0 && d.noise_to_signal() >= kMaxNoiseToSignal) {
    throw ConfigError("noise-to-signal ratio " + std::to_string(d.noise_to_signal()) + " is not below 0.3");
  }
  return d;
}

// ---------------------------------------------------------------------------
// Windows

/// Overlapping windows of depth+1 consecutive states; q[j], p[j] hold the
/// j-th state of every window as columns.
struct Windows {
  int depth = 1;
  std::vector<Matrix> q;
  std::vector<Matrix> p;

  [[nodiscard]] int count() const { return q.empty() ? 0 : static_cast<int>(q.front().cols()); }
};

inline Windows make_windows(const std::vector<Trajectory>& trs, int depth, const std::vector<int>& indices) {
  if (depth < 1) throw ConfigError("rollout depth must be >= 1");
  std::vector<std::pair<int, int>> starts;
  for (int i : indices) {
    const int len = static_cast<int>(trs.at(static_cast<std::size_t>(i)).size());
    for (int k = 0; k + depth < len; ++k) starts.emplace_back(i, k);
  }
  if (starts.empty()) throw ConfigError("trajectories are shorter than depth + 1");
  const auto n = trs.front().states.front().q.size();
  Windows w;
  w.depth = depth;
  for (int j = 0; j <= depth; ++j) {
    Matrix q(n, static_cast<Eigen::Index>(starts.size()));
    Matrix p(n, static_cast<Eigen::Index>(starts.size()));
    for (std::size_t c = 0; c < starts.size(); ++c) {
      const auto& s = trs[static_cast<std::size_t>(starts[c].first)].states[static_cast<std::size_t>(starts[c].second + j)];
      q.col(static_cast<Eigen::Index>(c)) = s.q;
      p.col(static_cast<Eigen::Index>(c)) = s.p;
    }
    w.q.push_back(std::move(q));
    w.p.push_back(std::move(p));
  }
  return w;
}

inline Windows make_windows(const std::vector<Trajectory>& trs, int depth) {
  std::vector<int> all(trs.size());
  std::iota(all.begin(), all.end(), 0);
  return make_windows(trs, depth, all);
}

inline Windows select(const Windows& w, const std::vector<int>& cols) {
  Windows out;
  out.depth = w.depth;
  for (std::size_t j = 0; j < w.q.size(); ++j) {
    Matrix q(w.q[j].rows(), static_cast<Eigen::Index>(cols.size()));
    Matrix p(w.p[j].rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      q.col(static_cast<Eigen::Index>(c)) = w.q[j].col(cols[c]);
      p.col(static_cast<Eigen::Index>(c)) = w.p[j].col(cols[c]);
    }
    out.q.push_back(std::move(q));
    out.p.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { mse, gaussian_nll };
enum class SigmaMode { fixed, learned };

inline const char* to_string(LossKind k) { return k == LossKind::mse ? "mse" : "gaussian_nll"; }
inline const char* to_string(SigmaMode m) { return m == SigmaMode::fixed ? "fixed" : "learned"; }

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "gaussian_nll") return LossKind::gaussian_nll;
  throw ConfigError("unknown loss '" + s + "' (expected mse|gaussian_nll)");
}

inline SigmaMode sigma_mode_from_string(const std::string& s) {
  if (s == "fixed") return SigmaMode::fixed;
  if (s == "learned") return SigmaMode::learned;
  throw ConfigError("unknown sigma mode '" + s + "' (expected fixed|learned)");
}

inline constexpr double kLossClamp = 1e6;

/// Per-entry negative log-likelihood of an isotropic Gaussian, averaged over
/// every predicted entry: mse / (2 sigma^2) + log sigma + log(2 pi) / 2.
inline double gaussian_nll(double mse, double log_sigma) {
  return mse * std::exp(-2.0 * log_sigma) / 2.0 + log_sigma + 0.5 * std::log(2.0 * std::numbers::pi);
}

/// Sum of squared deviations of a depth-step model rollout from the window's
/// later states; per_step receives each step's contribution.
template <class T>
T rollout_sq_error(const models::ModelField<T>& f, IntegratorId id, const Windows& w, double h, const T& like,
                   std::vector<double>* per_step = nullptr) {
  using diffnet::constant_like;
  T q = constant_like(like, w.q[0]);
  T p = constant_like(like, w.p[0]);
  std::optional<T> total;
  if (per_step != nullptr) per_step->clear();
  for (int j = 1; j <= w.depth; ++j) {
    std::tie(q, p) = integrate_step<T>(id, f, q, p, h, true);
    const T dq = q - constant_like(like, w.q[static_cast<std::size_t>(j)]);
    const T dp = p - constant_like(like, w.p[static_cast<std::size_t>(j)]);
    const T step = diffnet::sum_all(diffnet::square(dq)) + diffnet::sum_all(diffnet::square(dp));
    if (per_step != nullptr) per_step->push_back(diffnet::value_of(step)(0, 0));
    if (total) {
      total = *total + step;
    } else {
      total = step;
    }
  }
  return *total;
}

struct RecordedLoss {
  std::shared_ptr<diffnet::Tape> tape;
  models::ModelView<diffnet::Var> params;
  diffnet::Var mse_node;  // unset when diverged
  double mse = 0.0;
  double loss = 0.0;
  bool diverged = false;
  std::vector<double> per_step;  // squared error of each rollout step
};

/// Mean-squared (or Gaussian NLL) rollout loss on the tape. A rollout that
/// leaves the finite range is clamped at 1e6 and flagged.
inline RecordedLoss multi_step_loss(const ModelSpec& m, IntegratorId id, const Windows& w, double h, LossKind kind,
                                    double log_sigma = std::log(0.1)) {
  if (static_cast<int>(w.q.size()) < w.depth + 1) throw ContractError("window shorter than depth + 1");
  RecordedLoss r;
  r.tape = std::make_shared<diffnet::Tape>();
  r.params = models::bind(*r.tape, m);
  const models::ModelField<diffnet::Var> f(r.params);
  const double entries = static_cast<double>(w.depth) * 2.0 * static_cast<double>(w.q[0].rows() * w.count());
  try {
    const diffnet::Var anchor = r.tape->constant(Matrix::Zero(1, 1));
    const diffnet::Var sq = rollout_sq_error(f, id, w, h, anchor, &r.per_step);
    r.mse_node = (1.0 / entries) * sq;
    r.mse = r.mse_node.value()(0, 0);
  } catch (const DivergenceError&) {
    r.diverged = true;
  } catch (const SingularityError&) {
    r.diverged = true;
  }
  if (r.diverged || !std::isfinite(r.mse) || r.mse > kLossClamp) {
    r.diverged = true;
    r.mse = kLossClamp;
    r.loss = kLossClamp;
    return r;
  }
  r.loss = kind == LossKind::mse ? r.mse : gaussian_nll(r.mse, log_sigma);
  return r;
}

/// Value-mode loss (no tape), for evaluation and finite differences.
inline double loss_value(const ModelSpec& m, IntegratorId id, const Windows& w, double h, LossKind kind,
                         double log_sigma = std::log(0.1)) {
  const models::ModelField<Matrix> f(models::view(m));
  const double entries = static_cast<double>(w.depth) * 2.0 * static_cast<double>(w.q[0].rows() * w.count());
  double mse = 0.0;
  try {
    mse = rollout_sq_error<Matrix>(f, id, w, h, Matrix::Zero(1, 1))(0, 0) / entries;
  } catch (const DivergenceError&) {
    return kLossClamp;
  } catch (const SingularityError&) {
    return kLossClamp;
  }
  if (!std::isfinite(mse) || mse > kLossClamp) return kLossClamp;
  return kind == LossKind::mse ? mse : gaussian_nll(mse, log_sigma);
}

struct LossGradient {
  double loss = 0.0;
  double mse = 0.0;
  bool diverged = false;
  std::vector<NetParams> grads;  // one per parameter block
  double d_log_sigma = 0.0;
};

inline LossGradient loss_and_gradient(const ModelSpec& m, IntegratorId id, const Windows& w, double h, LossKind kind,
                                      double log_sigma = std::log(0.1)) {
  auto r = multi_step_loss(m, id, w, h, kind, log_sigma);
  LossGradient out;
  out.loss = r.loss;
  out.mse = r.mse;
  out.diverged = r.diverged;
  if (r.diverged) {
    for (const auto* b : models::param_blocks(m)) out.grads.push_back(diffnet::zeros_like(*b));
    return out;
  }
  out.grads = models::gradients_from(r.tape->backward(r.mse_node), r.params, m);
  if (kind == LossKind::gaussian_nll) {
    const double scale = std::exp(-2.0 * log_sigma) / 2.0;
    for (auto& g : out.grads) {
      for (auto& x : g.weights) x *= scale;
      for (auto& x : g.biases) x *= scale;
    }
    out.d_log_sigma = 1.0 - r.mse * std::exp(-2.0 * log_sigma);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  int depth = 10;
  int epochs = 100;
  int batch_size = 100;
  double lr = 1e-3;
  LossKind loss = LossKind::mse;
  SigmaMode sigma_mode = SigmaMode::fixed;
  double sigma = 0.1;
  std::uint64_t seed = 0;  // minibatch order
};

struct LogRow {
  int epoch = 0;
  double loss = 0.0;
  double mse = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  int diverged_batches = 0;
};

struct TrainResult {
  ModelSpec model;
  std::vector<LogRow> log;
  double log_sigma = 0.0;
  double wall_s = 0.0;
  int diverged_batches = 0;
};

inline void validate(const TrainConfig& c) {
  if (c.depth < 1) throw ConfigError("rollout depth must be >= 1");
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(c.lr > 0)) throw ConfigError("learning rate must be positive");
  if (!(c.sigma > 0)) throw ConfigError("sigma must be positive");
}

inline double grad_norm(const std::vector<NetParams>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (const auto& w : g.weights) s += w.squaredNorm();
    for (const auto& b : g.biases) s += b.squaredNorm();
  }
  return std::sqrt(s);
}

/// Adam on every parameter block, minibatches drawn from a seeded shuffle of
/// the windows. Sequential and deterministic.
inline TrainResult train(const ModelSpec& initial, IntegratorId id, const Windows& windows, double h,
                         const TrainConfig& cfg) {
  validate(cfg);
  if (windows.depth != cfg.depth) throw ContractError("windows were cut for a different depth");
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  res.model = initial;
  res.log_sigma = std::log(cfg.sigma);
  diffnet::AdamConfig ac;
  ac.lr = cfg.lr;
  std::vector<diffnet::AdamState> states;
  for (const auto* b : models::param_blocks(res.model)) states.push_back(diffnet::adam_init(*b, ac));
  double sig_m = 0.0, sig_v = 0.0;

  Rng rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(windows.count()));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LogRow row;
    row.epoch = epoch;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<int> cols(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(stop));
      const auto lg = loss_and_gradient(res.model, id, select(windows, cols), h, cfg.loss, res.log_sigma);
      ++batches;
      row.loss += lg.loss;
      row.mse += lg.mse;
      if (lg.diverged) {
        ++row.diverged_batches;
        continue;
      }
      row.grad_norm += grad_norm(lg.grads);
      auto blocks = models::param_blocks(res.model);
      for (std::size_t k = 0; k < blocks.size(); ++k) {
        try {
          std::tie(*blocks[k], states[k]) = diffnet::adam_step(*blocks[k], lg.grads[k], states[k]);
        } catch (const TrainingError& e) {
          throw TrainingError("epoch " + std::to_string(epoch) + ", block " + std::to_string(k) + ": " + e.what(),
                              e.layer);
        }
      }
      if (cfg.loss == LossKind::gaussian_nll && cfg.sigma_mode == SigmaMode::learned) {
        const auto step = static_cast<double>(states.front().step);
        sig_m = ac.beta1 * sig_m + (1 - ac.beta1) * lg.d_log_sigma;
        sig_v = ac.beta2 * sig_v + (1 - ac.beta2) * lg.d_log_sigma * lg.d_log_sigma;
        const double mh = sig_m / (1 - std::pow(ac.beta1, step));
        const double vh = sig_v / (1 - std::pow(ac.beta2, step));
        res.log_sigma -= ac.lr * mh / (std::sqrt(vh) + ac.eps);
      }
    }
    row.loss /= batches;
    row.mse /= batches;
    row.grad_norm /= std::max(1, batches - row.diverged_batches);
    if (!std::isfinite(row.loss)) throw TrainingError("non-finite loss at epoch " + std::to_string(epoch), -1);
    res.diverged_batches += row.diverged_batches;
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(row);
  }
  res.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace symplect::training
