#pragma once

// Forward-backward over the chunk × label output lattice.
//
// Indexing: m ∈ [0, M) is the chunk, u ∈ [0, U] the number of labels already
// emitted. From node (m, u) a path either emits label y_{u+1} and moves to
// (m, u+1), or emits blank and moves to (m+1, u). The blank at (M−1, U)
// terminates the path. Blank transitions use the log-probability of the node
// they leave, matching the transducer recursion.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "synct/error.hpp"

namespace synct {

template <class T>
T log_add(T a, T b) {
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

// Per-node log-probabilities produced by the decoder.
template <class T>
struct LatticeProbs {
  std::size_t chunks = 0;  // M
  std::size_t labels = 0;  // U
  std::vector<T> blank;    // M × (U+1)
  std::vector<T> label;    // M × U; label(m, u) is the log-prob of y_{u+1}

  LatticeProbs() = default;
  LatticeProbs(std::size_t m, std::size_t u)
      : chunks(m),
        labels(u),
        blank(m * (u + 1), -std::numeric_limits<T>::infinity()),
        label(m * u, -std::numeric_limits<T>::infinity()) {}

  T& blank_at(std::size_t m, std::size_t u) { return blank[m * (labels + 1) + u]; }
  T blank_at(std::size_t m, std::size_t u) const { return blank[m * (labels + 1) + u]; }
  T& label_at(std::size_t m, std::size_t u) { return label[m * labels + u]; }
  T label_at(std::size_t m, std::size_t u) const { return label[m * labels + u]; }
};

// Log-domain forward (α) and backward (β) variables, both M × (U+1).
template <class T>
struct LatticeTables {
  std::size_t chunks = 0;
  std::size_t labels = 0;
  std::vector<T> alpha;
  std::vector<T> beta;
  T log_prob = 0;

  T alpha_at(std::size_t m, std::size_t u) const { return alpha[m * (labels + 1) + u]; }
  T beta_at(std::size_t m, std::size_t u) const { return beta[m * (labels + 1) + u]; }
};

template <class T>
struct ForwardResult {
  std::vector<T> alpha;
  T log_prob = 0;
};

// log p(y|x) and its gradient with respect to every lattice log-probability.
template <class T>
struct LatticeLoss {
  T log_prob = 0;
  std::vector<T> blank_grad;  // M × (U+1)
  std::vector<T> label_grad;  // M × U
};

namespace detail {

template <class T>
void validate_lattice(const LatticeProbs<T>& p) {
  if (p.chunks == 0) fail(ErrorCode::kContract, "lattice needs at least one chunk");
  if (p.blank.size() != p.chunks * (p.labels + 1) ||
      p.label.size() != p.chunks * p.labels) {
    fail(ErrorCode::kShape, "lattice tables do not match M=" +
                                std::to_string(p.chunks) +
                                " U=" + std::to_string(p.labels));
  }
  for (T v : p.blank)
    if (std::isnan(v)) fail(ErrorCode::kNumeric, "NaN in blank log-probabilities");
  for (T v : p.label)
    if (std::isnan(v)) fail(ErrorCode::kNumeric, "NaN in label log-probabilities");
}

}  // namespace detail

template <class T>
ForwardResult<T> forward_pass(const LatticeProbs<T>& p) {
  detail::validate_lattice(p);
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  const std::size_t m_count = p.chunks;
  const std::size_t cols = p.labels + 1;
  ForwardResult<T> r;
  r.alpha.assign(m_count * cols, kNegInf);
  auto alpha = [&](std::size_t m, std::size_t u) -> T& { return r.alpha[m * cols + u]; };
  alpha(0, 0) = 0;
  for (std::size_t m = 0; m < m_count; ++m) {
    for (std::size_t u = 0; u < cols; ++u) {
      if (m == 0 && u == 0) continue;
      T acc = kNegInf;
      if (m > 0) acc = alpha(m - 1, u) + p.blank_at(m - 1, u);
      if (u > 0) acc = log_add(acc, alpha(m, u - 1) + p.label_at(m, u - 1));
      alpha(m, u) = acc;
    }
  }
  r.log_prob = alpha(m_count - 1, p.labels) + p.blank_at(m_count - 1, p.labels);
  return r;
}

template <class T>
std::vector<T> backward_pass(const LatticeProbs<T>& p) {
  detail::validate_lattice(p);
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  const std::size_t m_count = p.chunks;
  const std::size_t cols = p.labels + 1;
  std::vector<T> beta(m_count * cols, kNegInf);
  auto b = [&](std::size_t m, std::size_t u) -> T& { return beta[m * cols + u]; };
  for (std::size_t mi = m_count; mi-- > 0;) {
    for (std::size_t ui = cols; ui-- > 0;) {
      if (mi == m_count - 1 && ui == p.labels) {
        b(mi, ui) = p.blank_at(mi, ui);
        continue;
      }
      T acc = kNegInf;
      if (mi + 1 < m_count) acc = b(mi + 1, ui) + p.blank_at(mi, ui);
      if (ui < p.labels) acc = log_add(acc, b(mi, ui + 1) + p.label_at(mi, ui));
      b(mi, ui) = acc;
    }
  }
  return beta;
}

template <class T>
LatticeTables<T> lattice_tables(const LatticeProbs<T>& p) {
  ForwardResult<T> f = forward_pass(p);
  return {p.chunks, p.labels, std::move(f.alpha), backward_pass(p), f.log_prob};
}

// Every monotone path crosses each anti-diagonal m + u = n exactly once, so
// log Σ_{m+u=n} exp(α + β) must equal log p on every diagonal. Returns the
// largest absolute deviation in the log domain.
template <class T>
T diagonal_identity_check(const LatticeTables<T>& t) {
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  T worst = 0;
  const std::size_t diagonals = t.chunks + t.labels;
  for (std::size_t n = 0; n < diagonals; ++n) {
    T acc = kNegInf;
    bool any = false;
    for (std::size_t m = 0; m < t.chunks; ++m) {
      if (n < m || n - m > t.labels) continue;
      const T v = t.alpha_at(m, n - m) + t.beta_at(m, n - m);
      if (v == kNegInf) continue;
      any = true;
      acc = log_add(acc, v);
    }
    if (!any) continue;
    worst = std::max(worst, static_cast<T>(std::abs(acc - t.log_prob)));
  }
  return worst;
}

// ∂log p/∂label(m,u) = exp(α(m,u) + label(m,u) + β(m,u+1) − log p)
// ∂log p/∂blank(m,u) = exp(α(m,u) + blank(m,u) + β(m+1,u) − log p), and for the
// terminal blank exp(α(M−1,U) + blank(M−1,U) − log p).
// Each entry is the posterior probability that a path uses that transition.
template <class T>
LatticeLoss<T> lattice_grad(const LatticeProbs<T>& p) {
  LatticeTables<T> t = lattice_tables(p);
  if (!std::isfinite(t.log_prob)) {
    fail(ErrorCode::kDegenerateLattice, "lattice carries no path probability");
  }
  LatticeLoss<T> loss;
  loss.log_prob = t.log_prob;
  loss.blank_grad.assign(p.blank.size(), T(0));
  loss.label_grad.assign(p.label.size(), T(0));
  const std::size_t cols = p.labels + 1;
  for (std::size_t m = 0; m < p.chunks; ++m) {
    for (std::size_t u = 0; u < cols; ++u) {
      const T a = t.alpha_at(m, u);
      if (m + 1 < p.chunks) {
        loss.blank_grad[m * cols + u] =
            std::exp(a + p.blank_at(m, u) + t.beta_at(m + 1, u) - t.log_prob);
      } else if (u == p.labels) {
        loss.blank_grad[m * cols + u] =
            std::exp(a + p.blank_at(m, u) - t.log_prob);
      }
      if (u < p.labels) {
        loss.label_grad[m * p.labels + u] =
            std::exp(a + p.label_at(m, u) + t.beta_at(m, u + 1) - t.log_prob);
      }
    }
  }
  return loss;
}

struct PathEnumerationLimits {
  static constexpr std::size_t kMaxChunks = 8;
  static constexpr std::size_t kMaxLabels = 8;
};

template <class T>
struct PathEnumeration {
  T log_prob = 0;
  std::uint64_t paths = 0;
};

// Brute-force sum over every assignment of label counts k_1..k_M ≥ 0 with
// Σk = U. Each path multiplies, chunk by chunk, its labels' probabilities and
// then that chunk's blank.
template <class T>
PathEnumeration<T> enumerate_paths(const LatticeProbs<T>& p) {
  detail::validate_lattice(p);
  if (p.chunks > PathEnumerationLimits::kMaxChunks ||
      p.labels > PathEnumerationLimits::kMaxLabels) {
    fail(ErrorCode::kCapacity, "path enumeration limited to M<=8, U<=8");
  }
  std::vector<T> path_scores;
  auto visit = [&](auto&& self, std::size_t m, std::size_t u, T score) -> void {
    const bool last = m + 1 == p.chunks;
    for (std::size_t k = last ? p.labels - u : 0; u + k <= p.labels; ++k) {
      T s = score;
      for (std::size_t i = 0; i < k; ++i) s += p.label_at(m, u + i);
      s += p.blank_at(m, u + k);
      if (last) {
        path_scores.push_back(s);
      } else {
        self(self, m + 1, u + k, s);
      }
    }
  };
  visit(visit, 0, 0, T(0));
  T mx = -std::numeric_limits<T>::infinity();
  for (T s : path_scores) mx = std::max(mx, s);
  PathEnumeration<T> r;
  r.paths = path_scores.size();
  if (mx == -std::numeric_limits<T>::infinity()) {
    r.log_prob = mx;
    return r;
  }
  T total = 0;
  for (T s : path_scores) total += std::exp(s - mx);
  r.log_prob = mx + std::log(total);
  return r;
}

}  // namespace synct
