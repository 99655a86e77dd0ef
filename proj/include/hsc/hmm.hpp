#pragma once

/**
 * @file
 * @brief Gaze-based workload estimation with Gaussian-emission HMMs.
 *
 * Gaze points live in a unified two-screen plane: the driving screen covers
 * x in [0.5, 1] and the surveillance screen x in [0, 0.5). One HMM is trained
 * per workload class by Baum-Welch; a 4 s window (120 samples at 30 Hz) is
 * labelled by the class whose model gives the larger forward likelihood.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsc/error.hpp"
#include "hsc/track.hpp"

namespace hsc {

enum class Screen { driving, surveillance };

inline const char* to_string(Screen s) { return s == Screen::driving ? "driving" : "surveillance"; }

inline Screen screen_from_string(const std::string& s) {
  if (s == "driving") return Screen::driving;
  if (s == "surveillance") return Screen::surveillance;
  throw Error("invalid_argument", "screen must be 'driving' or 'surveillance', got '" + s + "'");
}

/// Screen that contains a point of the unified plane.
inline Screen screen_of(double x) { return x >= 0.5 ? Screen::driving : Screen::surveillance; }

struct GazePoint {
  double timestamp = 0.0;  // s
  double x = 0.0;
  double y = 0.0;
  Screen screen = Screen::driving;
  bool operator==(const GazePoint&) const = default;
};

inline constexpr std::size_t kWindowLength = 120;
inline constexpr double kGazeRate = 30.0;  // Hz

/// Exactly 120 consecutive gaze points with near-nominal 30 Hz spacing.
class GazeWindow {
 public:
  explicit GazeWindow(std::vector<GazePoint> points) : points_(std::move(points)) {
    if (points_.size() != kWindowLength)
      throw Error("invalid_argument", "a gaze window holds exactly 120 points, got " +
                                          std::to_string(points_.size()));
    const double nominal = 1.0 / kGazeRate;
    for (std::size_t i = 1; i < points_.size(); ++i) {
      const double gap = points_[i].timestamp - points_[i - 1].timestamp;
      if (!(gap >= 0.5 * nominal && gap <= 1.5 * nominal))
        throw Error("invalid_argument", "gaze timestamps must advance at 30 Hz (+-50%)");
    }
  }

  const std::vector<GazePoint>& points() const { return points_; }
  std::vector<Vec2> features() const {
    std::vector<Vec2> f(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) f[i] = {points_[i].x, points_[i].y};
    return f;
  }

 private:
  std::vector<GazePoint> points_;
};

using Cov2 = std::array<double, 3>;  // (xx, xy, yy)

struct GaussianHmm {
  int n_states = 0;
  std::vector<double> initial;
  std::vector<std::vector<double>> transition;  // transition[i][j] = p(next = j | current = i)
  std::vector<Vec2> means;
  std::vector<Cov2> covariances;

  void validate() const {
    require(n_states >= 1, "an HMM needs at least one state");
    const auto n = static_cast<std::size_t>(n_states);
    require(initial.size() == n && transition.size() == n && means.size() == n && covariances.size() == n,
            "HMM arrays must all have n_states entries");
    const auto simplex = [](const std::vector<double>& p, const char* what) {
      double sum = 0.0;
      for (double v : p) {
        require(std::isfinite(v) && v >= 0.0, std::string(what) + " entries must be non-negative");
        sum += v;
      }
      require(std::abs(sum - 1.0) <= 1e-9, std::string(what) + " must sum to 1");
    };
    simplex(initial, "initial probabilities");
    for (const auto& row : transition) {
      require(row.size() == n, "transition matrix must be square");
      simplex(row, "transition rows");
    }
    for (std::size_t j = 0; j < n; ++j) {
      const Cov2& c = covariances[j];
      require(std::isfinite(means[j].x) && std::isfinite(means[j].y), "means must be finite");
      require(c[0] > 0.0 && c[0] * c[2] - c[1] * c[1] > 0.0, "covariances must be positive definite");
    }
  }
  bool operator==(const GaussianHmm&) const = default;
};

enum class WorkloadLabel { moderate, high };

inline const char* to_string(WorkloadLabel l) { return l == WorkloadLabel::moderate ? "moderate" : "high"; }

/// w_t = c1 * label_index + c2 with c1 = c2 = 50.
inline double workload_value(WorkloadLabel l) { return l == WorkloadLabel::moderate ? 50.0 : 100.0; }

/// Fraction of the window's points tagged as the driving screen.
inline double eyes_on_road(const GazeWindow& w) {
  std::size_t n = 0;
  for (const GazePoint& p : w.points()) n += p.screen == Screen::driving;
  return static_cast<double>(n) / static_cast<double>(w.points().size());
}

namespace detail {

inline double log_sum_exp(const double* v, std::size_t n) {
  double m = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

inline double log_gaussian(Vec2 p, Vec2 mu, const Cov2& c) {
  const double det = c[0] * c[2] - c[1] * c[1];
  const double dx = p.x - mu.x, dy = p.y - mu.y;
  const double quad = (c[2] * dx * dx - 2.0 * c[1] * dx * dy + c[0] * dy * dy) / det;
  return -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * quad;
}

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : -INFINITY; }

/// Raises both eigenvalues of a symmetric 2x2 matrix to at least `floor`,
/// leaving it untouched when they already are.
inline Cov2 floor_eigenvalues(const Cov2& c, double floor) {
  const double tr = c[0] + c[2];
  const double diff = 0.5 * (c[0] - c[2]);
  const double rad = std::sqrt(diff * diff + c[1] * c[1]);
  const double l1 = 0.5 * tr + rad, l2 = 0.5 * tr - rad;
  if (l2 >= floor) return c;
  const double m1 = std::max(l1, floor), m2 = std::max(l2, floor);
  if (rad == 0.0) return {m1, 0.0, m1};
  // unit eigenvector of l1
  double vx, vy;
  if (diff >= 0.0) {
    vx = diff + rad;
    vy = c[1];
  } else {
    vx = c[1];
    vy = rad - diff;
  }
  const double norm = std::hypot(vx, vy);
  vx /= norm;
  vy /= norm;
  return {m1 * vx * vx + m2 * vy * vy, (m1 - m2) * vx * vy, m1 * vy * vy + m2 * vx * vx};
}

struct LogTables {
  std::vector<double> log_initial;
  std::vector<double> transition;  // row-major, linear scale
};

inline LogTables log_tables(const GaussianHmm& h) {
  const auto n = static_cast<std::size_t>(h.n_states);
  LogTables t;
  t.log_initial.resize(n);
  t.transition.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    t.log_initial[i] = safe_log(h.initial[i]);
    for (std::size_t j = 0; j < n; ++j) t.transition[i * n + j] = h.transition[i][j];
  }
  return t;
}

/// exp(v - max v) into `out`; returns max v.
inline double shifted_exp(const double* v, std::size_t n, double* out) {
  double m = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::isfinite(m) ? std::exp(v[i] - m) : 0.0;
  return m;
}

/// Log forward variables, T x N row-major; returns log p(X). Each step uses
/// log sum_i exp(a_i) A_ij = m + log sum_i exp(a_i - m) A_ij.
inline double forward(const GaussianHmm& h, const LogTables& lt, const std::vector<Vec2>& x,
                      std::vector<double>& alpha, std::vector<double>& log_b) {
  const auto n = static_cast<std::size_t>(h.n_states);
  const std::size_t T = x.size();
  alpha.assign(T * n, -INFINITY);
  log_b.resize(T * n);
  for (std::size_t j = 0; j < n; ++j) {
    const Cov2& c = h.covariances[j];
    const double det = c[0] * c[2] - c[1] * c[1];
    const double ixx = c[2] / det, ixy = -c[1] / det, iyy = c[0] / det;
    const double norm = -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det);
    const Vec2 mu = h.means[j];
    for (std::size_t t = 0; t < T; ++t) {
      const double dx = x[t].x - mu.x, dy = x[t].y - mu.y;
      log_b[t * n + j] = norm - 0.5 * (ixx * dx * dx + 2.0 * ixy * dx * dy + iyy * dy * dy);
    }
  }
  if (T == 0) return 0.0;
  for (std::size_t j = 0; j < n; ++j) alpha[j] = lt.log_initial[j] + log_b[j];
  std::vector<double> e(n);
  for (std::size_t t = 1; t < T; ++t) {
    const double m = shifted_exp(&alpha[(t - 1) * n], n, e.data());
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += e[i] * lt.transition[i * n + j];
      alpha[t * n + j] = m + safe_log(s) + log_b[t * n + j];
    }
  }
  return log_sum_exp(&alpha[(T - 1) * n], n);
}

inline void backward(const GaussianHmm& h, const LogTables& lt, std::size_t T, const std::vector<double>& log_b,
                     std::vector<double>& beta) {
  const auto n = static_cast<std::size_t>(h.n_states);
  beta.assign(T * n, 0.0);
  std::vector<double> v(n), e(n);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t j = 0; j < n; ++j) v[j] = log_b[(t + 1) * n + j] + beta[(t + 1) * n + j];
    const double m = shifted_exp(v.data(), n, e.data());
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += lt.transition[i * n + j] * e[j];
      beta[t * n + i] = m + safe_log(s);
    }
  }
}

}  // namespace detail

/// Exact log marginal likelihood of a feature sequence (log-space forward
/// algorithm).
inline double log_likelihood(const GaussianHmm& h, const std::vector<Vec2>& x) {
  std::vector<double> alpha, log_b;
  return detail::forward(h, detail::log_tables(h), x, alpha, log_b);
}

inline double log_likelihood(const GaussianHmm& h, const GazeWindow& w) { return log_likelihood(h, w.features()); }

/// Argmax of the two class likelihoods; an exact tie goes to moderate.
inline WorkloadLabel classify_log_likelihoods(double ll_moderate, double ll_high) {
  return ll_high > ll_moderate ? WorkloadLabel::high : WorkloadLabel::moderate;
}

inline WorkloadLabel classify(const GazeWindow& w, const GaussianHmm& moderate, const GaussianHmm& high) {
  const auto f = w.features();
  return classify_log_likelihoods(log_likelihood(moderate, f), log_likelihood(high, f));
}

/// Free parameters: initial (N-1), transitions N(N-1), means 2N, covariances 3N.
inline int free_parameters(int n_states) { return (n_states - 1) + n_states * (n_states - 1) + 5 * n_states; }

inline double bic(const GaussianHmm& h, const std::vector<std::vector<Vec2>>& data) {
  double ll = 0.0;
  std::size_t n = 0;
  for (const auto& seq : data) {
    ll += log_likelihood(h, seq);
    n += seq.size();
  }
  return -2.0 * ll + free_parameters(h.n_states) * std::log(static_cast<double>(n));
}

// --- training ----------------------------------------------------------------

struct EmOptions {
  int max_iter = 200;
  double tol = 1e-5;              // nats per sample
  double covariance_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct EmResult {
  GaussianHmm model;
  std::vector<double> log_likelihood_history;  // total log-likelihood of each iterate, last = model
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline std::vector<Vec2> pooled(const std::vector<std::vector<Vec2>>& data) {
  std::vector<Vec2> all;
  for (const auto& s : data) all.insert(all.end(), s.begin(), s.end());
  return all;
}

inline Cov2 scatter(const std::vector<Vec2>& pts, Vec2 mu) {
  Cov2 c{0, 0, 0};
  for (const Vec2& p : pts) {
    const double dx = p.x - mu.x, dy = p.y - mu.y;
    c[0] += dx * dx;
    c[1] += dx * dy;
    c[2] += dy * dy;
  }
  for (double& v : c) v /= static_cast<double>(pts.size());
  return c;
}

/// Seeded k-means++ followed by Lloyd iterations; returns centroids and the
/// assignment of every pooled point.
inline std::vector<Vec2> kmeans(const std::vector<Vec2>& pts, int k, std::uint64_t seed,
                                std::vector<int>& assign) {
  std::mt19937_64 rng(seed);
  std::vector<Vec2> c;
  c.push_back(pts[std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng)]);
  std::vector<double> d2(pts.size());
  while (static_cast<int>(c.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double best = INFINITY;
      for (const Vec2& q : c) best = std::min(best, (pts[i].x - q.x) * (pts[i].x - q.x) + (pts[i].y - q.y) * (pts[i].y - q.y));
      d2[i] = best;
      total += best;
    }
    if (!(total > 0.0)) {
      c.push_back(pts[std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng)]);
      continue;
    }
    double r = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = pts.size() - 1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      r -= d2[i];
      if (r <= 0.0) {
        pick = i;
        break;
      }
    }
    c.push_back(pts[pick]);
  }
  assign.assign(pts.size(), 0);
  for (int it = 0; it < 100; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      int best_j = 0;
      double best = INFINITY;
      for (int j = 0; j < k; ++j) {
        const double dx = pts[i].x - c[j].x, dy = pts[i].y - c[j].y;
        const double d = dx * dx + dy * dy;
        if (d < best) {
          best = d;
          best_j = j;
        }
      }
      changed = changed || assign[i] != best_j;
      assign[i] = best_j;
    }
    std::vector<Vec2> sum(static_cast<std::size_t>(k), Vec2{0, 0});
    std::vector<std::size_t> cnt(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      sum[assign[i]].x += pts[i].x;
      sum[assign[i]].y += pts[i].y;
      ++cnt[assign[i]];
    }
    for (int j = 0; j < k; ++j)
      if (cnt[j] > 0) c[j] = {sum[j].x / cnt[j], sum[j].y / cnt[j]};
    if (!changed && it > 0) break;
  }
  return c;
}

inline GaussianHmm initial_model(const std::vector<std::vector<Vec2>>& data, int n, const EmOptions& opt) {
  const std::vector<Vec2> all = pooled(data);
  std::vector<int> assign;
  const std::vector<Vec2> centers = kmeans(all, n, opt.seed, assign);
  Vec2 mean{0, 0};
  for (const Vec2& p : all) {
    mean.x += p.x;
    mean.y += p.y;
  }
  mean.x /= static_cast<double>(all.size());
  mean.y /= static_cast<double>(all.size());
  const Cov2 global = floor_eigenvalues(scatter(all, mean), opt.covariance_floor);

  GaussianHmm h;
  h.n_states = n;
  const auto un = static_cast<std::size_t>(n);
  h.means = centers;
  h.covariances.resize(un);
  for (std::size_t j = 0; j < un; ++j) {
    std::vector<Vec2> members;
    for (std::size_t i = 0; i < all.size(); ++i)
      if (assign[i] == static_cast<int>(j)) members.push_back(all[i]);
    h.covariances[j] = members.size() >= 3 ? floor_eigenvalues(scatter(members, centers[j]), opt.covariance_floor)
                                           : global;
  }
  // initial and transition probabilities from the k-means label sequence,
  // with one pseudo-count per entry
  h.initial.assign(un, 1.0);
  h.transition.assign(un, std::vector<double>(un, 1.0));
  std::size_t offset = 0;
  for (const auto& seq : data) {
    if (seq.empty()) continue;
    h.initial[assign[offset]] += 1.0;
    for (std::size_t t = 1; t < seq.size(); ++t) h.transition[assign[offset + t - 1]][assign[offset + t]] += 1.0;
    offset += seq.size();
  }
  const auto normalize = [](std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    for (double& x : v) x /= s;
  };
  normalize(h.initial);
  for (auto& row : h.transition) normalize(row);
  return h;
}

inline void check_not_degenerate(const std::vector<std::vector<Vec2>>& data) {
  bool first = true;
  Vec2 ref{};
  bool x_varies = false, y_varies = false;
  std::size_t count = 0;
  for (const auto& seq : data)
    for (const Vec2& p : seq) {
      require_finite(p.x, "gaze x");
      require_finite(p.y, "gaze y");
      if (first) {
        ref = p;
        first = false;
      }
      x_varies = x_varies || p.x != ref.x;
      y_varies = y_varies || p.y != ref.y;
      ++count;
    }
  if (count == 0) throw Error("invalid_argument", "training data holds no observations");
  if (!x_varies && !y_varies) throw Error("degenerate_data", "training data is degenerate in dimensions x and y (all points identical)");
  if (!x_varies) throw Error("degenerate_data", "training data is degenerate in dimension x (constant)");
  if (!y_varies) throw Error("degenerate_data", "training data is degenerate in dimension y (constant)");
}

}  // namespace detail

/// Baum-Welch in log space from a seeded k-means initialisation.
inline EmResult em_train(const std::vector<std::vector<Vec2>>& data, int n_states, const EmOptions& opt = {}) {
  require(!data.empty(), "training needs at least one sequence");
  require(n_states >= 1 && n_states <= 10, "state count must lie in [1, 10]");
  require(opt.max_iter >= 0 && opt.tol >= 0.0 && opt.covariance_floor > 0.0, "invalid EM options");
  detail::check_not_degenerate(data);

  const auto n = static_cast<std::size_t>(n_states);
  std::size_t total_points = 0;
  for (const auto& s : data) total_points += s.size();

  EmResult res;
  GaussianHmm h = detail::initial_model(data, n_states, opt);
  std::vector<double> alpha, beta, log_b, gamma, tmp(n), ea(n), eb(n);
  double prev_ll = -INFINITY;
  for (int iter = 0;; ++iter) {
    const detail::LogTables lt = detail::log_tables(h);
    std::vector<double> init_acc(n, 0.0), trans_acc(n * n, 0.0), occ(n, 0.0), occ_from(n, 0.0);
    std::vector<double> sx(n, 0.0), sy(n, 0.0);
    double ll = 0.0;
    // E-step: sufficient statistics for means first, scatter in a second pass
    std::vector<std::vector<double>> gammas;
    gammas.reserve(data.size());
    for (const auto& seq : data) {
      const std::size_t T = seq.size();
      if (T == 0) {
        gammas.emplace_back();
        continue;
      }
      const double lp = detail::forward(h, lt, seq, alpha, log_b);
      detail::backward(h, lt, T, log_b, beta);
      ll += lp;
      gamma.assign(T * n, 0.0);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < n; ++j) gamma[t * n + j] = std::exp(alpha[t * n + j] + beta[t * n + j] - lp);
      for (std::size_t j = 0; j < n; ++j) init_acc[j] += gamma[j];
      // xi_t(i, j) = exp(alpha_t(i) + log A_ij + log b_t+1(j) + beta_t+1(j) - lp), factored
      // into two shifted exponentials so each step costs 2N exp calls
      for (std::size_t t = 0; t + 1 < T; ++t) {
        for (std::size_t j = 0; j < n; ++j) tmp[j] = log_b[(t + 1) * n + j] + beta[(t + 1) * n + j];
        const double ma = detail::shifted_exp(&alpha[t * n], n, ea.data());
        const double mb = detail::shifted_exp(tmp.data(), n, eb.data());
        const double scale = std::exp(ma + mb - lp);
        for (std::size_t i = 0; i < n; ++i) {
          occ_from[i] += gamma[t * n + i];
          if (std::isfinite(scale)) {
            const double ai = ea[i] * scale;
            for (std::size_t j = 0; j < n; ++j) trans_acc[i * n + j] += ai * lt.transition[i * n + j] * eb[j];
          } else {
            for (std::size_t j = 0; j < n; ++j)
              if (lt.transition[i * n + j] > 0.0)
                trans_acc[i * n + j] += std::exp(alpha[t * n + i] + std::log(lt.transition[i * n + j]) + tmp[j] - lp);
          }
        }
      }
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < n; ++j) {
          occ[j] += gamma[t * n + j];
          sx[j] += gamma[t * n + j] * seq[t].x;
          sy[j] += gamma[t * n + j] * seq[t].y;
        }
      gammas.push_back(gamma);
    }
    res.log_likelihood_history.push_back(ll);
    const bool small_gain = iter > 0 && (ll - prev_ll) / static_cast<double>(total_points) < opt.tol;
    if (small_gain || iter >= opt.max_iter) {
      res.converged = small_gain;
      res.iterations = iter;
      break;
    }
    prev_ll = ll;

    // M-step
    GaussianHmm next = h;
    double init_sum = 0.0;
    for (double v : init_acc) init_sum += v;
    for (std::size_t j = 0; j < n; ++j) next.initial[j] = init_acc[j] / init_sum;
    for (std::size_t i = 0; i < n; ++i) {
      if (occ_from[i] > 0.0) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) row += trans_acc[i * n + j];
        for (std::size_t j = 0; j < n; ++j) next.transition[i][j] = trans_acc[i * n + j] / row;
      }
      if (occ[i] > 0.0) next.means[i] = {sx[i] / occ[i], sy[i] / occ[i]};
    }
    std::vector<Cov2> scat(n, Cov2{0, 0, 0});
    for (std::size_t s = 0; s < data.size(); ++s)
      for (std::size_t t = 0; t < data[s].size(); ++t)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = gammas[s][t * n + j];
          const double dx = data[s][t].x - next.means[j].x, dy = data[s][t].y - next.means[j].y;
          scat[j][0] += g * dx * dx;
          scat[j][1] += g * dx * dy;
          scat[j][2] += g * dy * dy;
        }
    for (std::size_t j = 0; j < n; ++j)
      if (occ[j] > 0.0)
        next.covariances[j] = detail::floor_eigenvalues({scat[j][0] / occ[j], scat[j][1] / occ[j], scat[j][2] / occ[j]},
                                                        opt.covariance_floor);
    h = std::move(next);
  }
  res.model = std::move(h);
  return res;
}

struct StateCountSweep {
  std::vector<int> n_states;
  std::vector<double> bic;
  int best = 0;
  EmResult best_fit;
};

/// Trains every candidate state count and keeps the BIC minimiser; on a tie
/// the smaller count wins.
inline StateCountSweep select_state_count(const std::vector<std::vector<Vec2>>& data, int lo, int hi,
                                          const EmOptions& opt = {}) {
  require(lo >= 1 && hi >= lo && hi <= 10, "state-count sweep must lie in [1, 10]");
  StateCountSweep sweep;
  double best = INFINITY;
  for (int n = lo; n <= hi; ++n) {
    EmResult r = em_train(data, n, opt);
    const double b = bic(r.model, data);
    sweep.n_states.push_back(n);
    sweep.bic.push_back(b);
    if (b < best) {
      best = b;
      sweep.best = n;
      sweep.best_fit = std::move(r);
    }
  }
  return sweep;
}

/// Draws a state path and observations from the model.
template <class Rng>
std::vector<Vec2> sample_sequence(const GaussianHmm& h, std::size_t T, Rng& rng, std::vector<int>* states = nullptr) {
  std::vector<Vec2> out(T);
  std::normal_distribution<double> z(0.0, 1.0);
  std::discrete_distribution<int> init(h.initial.begin(), h.initial.end());
  std::vector<std::discrete_distribution<int>> trans;
  for (const auto& row : h.transition) trans.emplace_back(row.begin(), row.end());
  int s = init(rng);
  if (states) states->assign(T, 0);
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) s = trans[static_cast<std::size_t>(s)](rng);
    if (states) (*states)[t] = s;
    const Cov2& c = h.covariances[static_cast<std::size_t>(s)];
    const double l11 = std::sqrt(c[0]);
    const double l21 = c[1] / l11;
    const double l22 = std::sqrt(std::max(0.0, c[2] - l21 * l21));
    const double a = z(rng), b = z(rng);
    out[t] = {h.means[static_cast<std::size_t>(s)].x + l11 * a, h.means[static_cast<std::size_t>(s)].y + l21 * a + l22 * b};
  }
  return out;
}

// --- evaluation --------------------------------------------------------------

struct LabeledWindow {
  GazeWindow window;
  WorkloadLabel label;
};

struct Participant {
  std::string id;
  std::vector<LabeledWindow> windows;
};

struct BinaryCounts {
  int tp = 0, fp = 0, fn = 0;
};

struct PrfScores {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Precision, recall and F1 of one class; an empty denominator scores 0.
inline PrfScores class_scores(const BinaryCounts& c) {
  PrfScores s;
  s.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  s.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

/// Macro-averaged precision and recall over both classes, F1 from those.
inline PrfScores macro_scores(const std::vector<WorkloadLabel>& truth, const std::vector<WorkloadLabel>& predicted) {
  require(truth.size() == predicted.size(), "label vectors must have equal length");
  double p = 0.0, r = 0.0;
  for (WorkloadLabel cls : {WorkloadLabel::moderate, WorkloadLabel::high}) {
    BinaryCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      c.tp += truth[i] == cls && predicted[i] == cls;
      c.fp += truth[i] != cls && predicted[i] == cls;
      c.fn += truth[i] == cls && predicted[i] != cls;
    }
    const PrfScores s = class_scores(c);
    p += 0.5 * s.precision;
    r += 0.5 * s.recall;
  }
  return {p, r, p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0};
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

/// Mean and standard error (sample standard deviation over sqrt(n)).
inline MeanSe mean_se(const std::vector<double>& v) {
  MeanSe m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return m;
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  return m;
}

struct HoldoutReport {
  std::vector<PrfScores> runs;
  MeanSe precision, recall, f1;
};

struct HoldoutOptions {
  int n_runs = 100;
  int holdout_size = 3;
  int n_states = 2;
  std::uint64_t seed = 0;
  EmOptions em;
};

/// Repeated participant-level holdout: train both class models on the
/// remaining participants and score the held-out windows.
inline HoldoutReport holdout_evaluate(const std::vector<Participant>& participants, const HoldoutOptions& opt) {
  require(opt.holdout_size >= 1, "holdout size must be positive");
  if (static_cast<int>(participants.size()) < opt.holdout_size + 1)
    throw Error("invalid_argument", "holdout needs more participant groups than the holdout size");
  require(opt.n_runs >= 1, "holdout needs at least one run");
  std::mt19937_64 rng(opt.seed);
  HoldoutReport rep;
  std::vector<std::size_t> order(participants.size());
  for (int run = 0; run < opt.n_runs; ++run) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<Vec2>> train_mod, train_high;
    std::vector<const LabeledWindow*> test;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Participant& p = participants[order[k]];
      for (const LabeledWindow& w : p.windows) {
        if (static_cast<int>(k) < opt.holdout_size)
          test.push_back(&w);
        else
          (w.label == WorkloadLabel::moderate ? train_mod : train_high).push_back(w.window.features());
      }
    }
    if (train_mod.empty() || train_high.empty())
      throw Error("invalid_argument", "a holdout split left a workload class without training data");
    EmOptions em = opt.em;
    em.seed = opt.em.seed + static_cast<std::uint64_t>(run);
    const GaussianHmm m = em_train(train_mod, opt.n_states, em).model;
    const GaussianHmm h = em_train(train_high, opt.n_states, em).model;
    std::vector<WorkloadLabel> truth, pred;
    for (const LabeledWindow* w : test) {
      truth.push_back(w->label);
      pred.push_back(classify(w->window, m, h));
    }
    rep.runs.push_back(macro_scores(truth, pred));
  }
  std::vector<double> p, r, f;
  for (const PrfScores& s : rep.runs) {
    p.push_back(s.precision);
    r.push_back(s.recall);
    f.push_back(s.f1);
  }
  rep.precision = mean_se(p);
  rep.recall = mean_se(r);
  rep.f1 = mean_se(f);
  return rep;
}

// --- serialisation -----------------------------------------------------------

namespace detail {
inline std::string g17(double v) {
  require_finite(v, "serialised value");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

/// JSON object with 17-significant-digit floats.
inline std::string to_json(const GaussianHmm& h, int indent = 0) {
  using detail::g17;
  const std::string pad(static_cast<std::size_t>(indent), ' ');
  std::ostringstream o;
  const auto list = [&](const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + g17(v[i]);
    return s + "]";
  };
  o << "{\n" << pad << "  \"n_states\": " << h.n_states << ",\n";
  o << pad << "  \"initial\": " << list(h.initial) << ",\n";
  o << pad << "  \"transition\": [";
  for (std::size_t i = 0; i < h.transition.size(); ++i) o << (i ? ", " : "") << list(h.transition[i]);
  o << "],\n" << pad << "  \"means\": [";
  for (std::size_t i = 0; i < h.means.size(); ++i) o << (i ? ", " : "") << list({h.means[i].x, h.means[i].y});
  o << "],\n" << pad << "  \"covariances\": [";
  for (std::size_t i = 0; i < h.covariances.size(); ++i) {
    const Cov2& c = h.covariances[i];
    o << (i ? ", " : "") << "[" << list({c[0], c[1]}) << ", " << list({c[1], c[2]}) << "]";
  }
  o << "]\n" << pad << "}";
  return o.str();
}

inline GaussianHmm hmm_from_json(const nlohmann::json& j) {
  try {
    GaussianHmm h;
    h.n_states = j.at("n_states").get<int>();
    h.initial = j.at("initial").get<std::vector<double>>();
    h.transition = j.at("transition").get<std::vector<std::vector<double>>>();
    for (const auto& m : j.at("means")) {
      const auto v = m.get<std::vector<double>>();
      require(v.size() == 2, "each mean must be a 2-vector");
      h.means.push_back({v[0], v[1]});
    }
    for (const auto& c : j.at("covariances")) {
      const auto m = c.get<std::vector<std::vector<double>>>();
      require(m.size() == 2 && m[0].size() == 2 && m[1].size() == 2, "each covariance must be 2x2");
      require(m[0][1] == m[1][0], "covariances must be symmetric");
      h.covariances.push_back({m[0][0], m[0][1], m[1][1]});
    }
    h.validate();
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw Error("io", std::string("malformed HMM JSON: ") + e.what());
  }
}

struct ModelPair {
  GaussianHmm moderate;
  GaussianHmm high;
};

inline std::string to_json(const ModelPair& p) {
  return "{\n  \"moderate\": " + to_json(p.moderate, 2) + ",\n  \"high\": " + to_json(p.high, 2) + "\n}\n";
}

inline ModelPair read_model_pair(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw Error("missing_models", "cannot open HMM model file '" + path +
                                      "'; generate one with `hsc train-hmm --out <dir>`");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("io", std::string("malformed HMM model file: ") + e.what());
  }
  if (!j.contains("moderate") || !j.contains("high"))
    throw Error("io", "HMM model file must hold 'moderate' and 'high' models");
  return {hmm_from_json(j.at("moderate")), hmm_from_json(j.at("high"))};
}

inline void write_model_pair(const std::string& path, const ModelPair& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write HMM model file " + path);
  out << to_json(p);
}

/// Gaze log as CSV with header `timestamp,x,y,screen`.
inline void write_gaze_csv(std::ostream& out, const std::vector<GazePoint>& pts) {
  out << "timestamp,x,y,screen\n";
  for (const GazePoint& p : pts)
    out << detail::g17(p.timestamp) << ',' << detail::g17(p.x) << ',' << detail::g17(p.y) << ',' << to_string(p.screen)
        << '\n';
}

inline std::vector<GazePoint> read_gaze_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("io", "gaze file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "timestamp,x,y,screen") throw Error("io", "gaze file must start with the header 'timestamp,x,y,screen'");
  std::vector<GazePoint> pts;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw Error("io", "gaze row " + std::to_string(row) + " must have 4 fields");
    try {
      pts.push_back({std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), screen_from_string(f[3])});
    } catch (const std::logic_error&) {
      throw Error("io", "gaze row " + std::to_string(row) + " is malformed");
    }
  }
  return pts;
}

/// Consecutive non-overlapping 120-sample windows of a gaze log.
inline std::vector<GazeWindow> split_windows(const std::vector<GazePoint>& pts) {
  std::vector<GazeWindow> out;
  for (std::size_t i = 0; i + kWindowLength <= pts.size(); i += kWindowLength)
    out.emplace_back(std::vector<GazePoint>(pts.begin() + static_cast<long>(i),
                                            pts.begin() + static_cast<long>(i + kWindowLength)));
  return out;
}

}  // namespace hsc
