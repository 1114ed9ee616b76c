// SPDX-License-Identifier: Apache-2.0
//
// Reference computations used as test oracles. None of these call into the
// library code they check; they are written from the formulas directly.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace oracle {

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// Full table of pairwise cosines, then the mean over rows of the row max.
inline double alignment(const std::vector<std::vector<double>>& prompt, const std::vector<std::vector<double>>& desc) {
  std::vector<std::vector<double>> table(prompt.size(), std::vector<double>(desc.size()));
  for (std::size_t i = 0; i < prompt.size(); ++i)
    for (std::size_t j = 0; j < desc.size(); ++j) table[i][j] = cosine(prompt[i], desc[j]);
  double total = 0;
  for (const auto& row : table) {
    double best = row[0];
    for (double v : row) best = v > best ? v : best;
    total += best;
  }
  return total / static_cast<double>(prompt.size());
}

/// One step of a residual linear-Gaussian chain, as used by the toy policy.
struct ChainStep {
  std::vector<double> x;       // state latent
  std::vector<double> action;  // next latent
  int step;
};

/// Σ_t ∇θ log N(a_t; x_t + g(W_t x_t + b_t), σ²I) · R, with θ laid out as
/// [W_0 (row-major), b_0, W_1, b_1, ...].
inline std::vector<double> reinforce_sum(const std::vector<ChainStep>& steps, double reward,
                                         const std::vector<double>& theta, std::size_t d, int T, double sigma,
                                         double gain) {
  const std::size_t block = d * d + d;
  std::vector<double> g(theta.size(), 0.0);
  for (const auto& s : steps) {
    const double* W = theta.data() + static_cast<std::size_t>(s.step) * block;
    const double* b = W + d * d;
    for (std::size_t i = 0; i < d; ++i) {
      double mu = s.x[i] + gain * b[i];
      for (std::size_t j = 0; j < d; ++j) mu += gain * W[i * d + j] * s.x[j];
      const double coef = gain * (s.action[i] - mu) / (sigma * sigma) * reward;
      for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(s.step) * block + i * d + j] += coef * s.x[j];
      g[static_cast<std::size_t>(s.step) * block + d * d + i] += coef;
    }
  }
  (void)T;
  return g;
}

struct Trace {
  std::size_t best_index;
  double best_score;
  std::size_t rounds;
};

/// Reference greedy loop with an iteration cap. The first candidate is the
/// stored prompt until something beats T^max = 0.
inline Trace greedy_reference(const std::vector<double>& scores, std::size_t cap) {
  double t_max = 0.0;
  std::size_t best = 0;
  std::size_t i = 0;
  double t = scores[0];
  std::size_t rounds = 1;
  while (t > t_max) {
    t_max = t;
    best = i;
    if (rounds == cap) break;
    ++i;
    t = scores[i];
    ++rounds;
  }
  return {best, t_max, rounds};
}

/// Central differences of f at θ.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> theta, double h) {
  std::vector<double> g(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double keep = theta[k];
    theta[k] = keep + h;
    const double up = f(theta);
    theta[k] = keep - h;
    const double down = f(theta);
    theta[k] = keep;
    g[k] = (up - down) / (2 * h);
  }
  return g;
}

/// Sample log row used by the metric recounts: per-attribute scores of one
/// judge, or nothing when the sample was refused / unscored.
struct LogRow {
  bool scored;
  double scores[6];
  bool has_guard;
  bool guard_pass;
};

struct Recount {
  std::size_t attribute_hits[6] = {0, 0, 0, 0, 0, 0};
  std::size_t any_hits = 0;
  std::size_t denominator = 0;
  std::size_t guard_pass = 0;
  std::size_t guard_total = 0;
};

inline Recount recount(const std::vector<LogRow>& rows, double threshold, bool refusals_count) {
  Recount r;
  for (const auto& row : rows) {
    if (row.has_guard) {
      ++r.guard_total;
      if (row.guard_pass) ++r.guard_pass;
    }
    if (!row.scored) {
      if (refusals_count) ++r.denominator;
      continue;
    }
    ++r.denominator;
    bool any = false;
    for (int a = 0; a < 6; ++a)
      if (row.scores[a] > threshold) {
        ++r.attribute_hits[a];
        any = true;
      }
    if (any) ++r.any_hits;
  }
  return r;
}

}  // namespace oracle
