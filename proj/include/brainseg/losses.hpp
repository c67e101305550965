#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "brainseg/array.hpp"

namespace brainseg {

/// Probability clamp applied before every log.
inline constexpr double kProbEps = 1e-7;

template <class T>
struct LossValue {
  T value = T(0);
  Array<T> grad;  // d value / d input, same shape as the input
};

namespace detail {

template <class T>
T clamp_prob(T p) {
  return std::clamp(p, T(kProbEps), T(1.0 - kProbEps));
}

// Derivative of log(clamp(p)) w.r.t. p: zero where the clamp is active.
template <class T>
T dlog_clamped(T p) {
  return (p > T(kProbEps) && p < T(1.0 - kProbEps)) ? T(1) / p : T(0);
}

template <class T>
T dlog1m_clamped(T p) {
  return (p > T(kProbEps) && p < T(1.0 - kProbEps)) ? T(-1) / (T(1) - p) : T(0);
}

}  // namespace detail

/// -E[log D(x)] - E[log(1 - D(G(z)))] over the patch maps of real and generated batches.
template <class T>
struct DiscLoss {
  T value = T(0);
  Array<T> grad_real, grad_fake;
};

template <class T>
DiscLoss<T> disc_loss(const Array<T>& real_scores, const Array<T>& fake_scores) {
  DiscLoss<T> out;
  out.grad_real = Array<T>(real_scores.shape());
  out.grad_fake = Array<T>(fake_scores.shape());
  double acc_r = 0.0, acc_f = 0.0;
  const double nr = double(real_scores.size()), nf = double(fake_scores.size());
  for (std::size_t i = 0; i < real_scores.size(); ++i) {
    const T p = real_scores[i];
    acc_r -= std::log(double(detail::clamp_prob(p)));
    out.grad_real[i] = T(-double(detail::dlog_clamped(p)) / nr);
  }
  for (std::size_t i = 0; i < fake_scores.size(); ++i) {
    const T p = fake_scores[i];
    acc_f -= std::log(1.0 - double(detail::clamp_prob(p)));
    out.grad_fake[i] = T(-double(detail::dlog1m_clamped(p)) / nf);
  }
  out.value = T(acc_r / nr + acc_f / nf);
  return out;
}

/// -E[log D(G(z))].
template <class T>
LossValue<T> gen_loss(const Array<T>& fake_scores) {
  LossValue<T> out{T(0), Array<T>(fake_scores.shape())};
  double acc = 0.0;
  const double n = double(fake_scores.size());
  for (std::size_t i = 0; i < fake_scores.size(); ++i) {
    const T p = fake_scores[i];
    acc -= std::log(double(detail::clamp_prob(p)));
    out.grad[i] = T(-double(detail::dlog_clamped(p)) / n);
  }
  out.value = T(acc / n);
  return out;
}

/// Binary cross-entropy summed over channels and averaged over pixels.
/// probs/targets: [B,C,H,W] (or any shape whose second axis is the class axis; rank < 2 means C = 1).
template <class T>
LossValue<T> ce_loss(const Array<T>& probs, const Array<T>& targets) {
  require_same_shape(probs, targets, "ce_loss");
  const std::size_t channels = probs.rank() >= 2 ? probs.dim(1) : 1;
  const double pixels = double(probs.size()) / double(channels);
  LossValue<T> out{T(0), Array<T>(probs.shape())};
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i], y = targets[i];
    const double pc = detail::clamp_prob(p);
    acc -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    out.grad[i] = T(-(y * double(detail::dlog_clamped(probs[i])) + (1.0 - y) * double(detail::dlog1m_clamped(probs[i]))) /
                    pixels);
  }
  out.value = T(acc / pixels);
  return out;
}

/// 1 - (2 sum(p t) + s) / (sum p + sum t + s).
template <class T>
LossValue<T> dice_loss(const Array<T>& soft_mask, const Array<T>& target, double smooth = 1e-6) {
  require_same_shape(soft_mask, target, "dice_loss");
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < soft_mask.size(); ++i) {
    inter += double(soft_mask[i]) * target[i];
    sp += soft_mask[i];
    st += target[i];
  }
  const double num = 2.0 * inter + smooth, den = sp + st + smooth;
  LossValue<T> out{T(1.0 - num / den), Array<T>(soft_mask.shape())};
  for (std::size_t i = 0; i < soft_mask.size(); ++i)
    out.grad[i] = T(-(2.0 * target[i] * den - num) / (den * den));
  return out;
}

/// Mean of dice_loss over the nested tumor regions WT = {1,2,4}, TC = {1,4}, ET = {4}, built from
/// class probabilities [B,4,H,W] ordered (background, 1, 2, 4) and matching one-hot targets.
template <class T>
LossValue<T> region_dice_loss(const Array<T>& probs, const Array<T>& onehot, double smooth = 1e-6) {
  require_same_shape(probs, onehot, "region_dice_loss");
  if (probs.rank() != 4 || probs.dim(1) != 4) throw ShapeError("region_dice_loss: expected [B,4,H,W]");
  const std::size_t B = probs.dim(0), area = probs.dim(2) * probs.dim(3);
  // Region membership per class channel (background, 1, 2, 4).
  static constexpr std::array<std::array<int, 4>, 3> member = {{{0, 1, 1, 1}, {0, 1, 0, 1}, {0, 0, 0, 1}}};
  LossValue<T> out{T(0), Array<T>(probs.shape(), T(0))};
  Array<T> p({B, area}), t({B, area});
  double total = 0.0;
  for (const auto& m : member) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < area; ++i) {
        double sp = 0.0, st = 0.0;
        for (std::size_t c = 0; c < 4; ++c)
          if (m[c]) {
            sp += probs[(b * 4 + c) * area + i];
            st += onehot[(b * 4 + c) * area + i];
          }
        p[b * area + i] = T(sp);
        t[b * area + i] = T(st);
      }
    const auto d = dice_loss(p, t, smooth);
    total += double(d.value);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < 4; ++c)
        if (m[c])
          for (std::size_t i = 0; i < area; ++i) out.grad[(b * 4 + c) * area + i] += d.grad[b * area + i] / T(3);
  }
  out.value = T(total / 3.0);
  return out;
}

/// alpha * ||M||_1 / (pixel count).
template <class T>
LossValue<T> sparsity_loss(const Array<T>& mask, double alpha) {
  const double n = double(mask.size());
  double acc = 0.0;
  for (auto v : mask) acc += std::abs(double(v));
  LossValue<T> out{T(alpha * acc / n), Array<T>(mask.shape())};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double s = mask[i] > T(0) ? 1.0 : (mask[i] < T(0) ? -1.0 : 0.0);
    out.grad[i] = T(alpha * s / n);
  }
  return out;
}

/// gamma * mean_b |sum(M_b) - S_b| / S_b over batch items with S_b > 0.
/// mask: [B, ...]; s_label: per-item labeled pixel counts.
template <class T>
LossValue<T> size_loss(const Array<T>& mask, const std::vector<double>& s_label, double gamma) {
  if (mask.rank() < 1 || mask.dim(0) != s_label.size()) throw ShapeError("size_loss: one S_label per batch item");
  const std::size_t B = mask.dim(0), per = B ? mask.size() / B : 0;
  LossValue<T> out{T(0), Array<T>(mask.shape(), T(0))};
  std::size_t valid = 0;
  for (double s : s_label) valid += s > 0.0 ? 1 : 0;
  if (valid == 0) return out;
  double acc = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (!(s_label[b] > 0.0)) continue;
    double sum = 0.0;
    for (std::size_t i = 0; i < per; ++i) sum += mask[b * per + i];
    const double diff = sum - s_label[b];
    acc += std::abs(diff) / s_label[b];
    const double g = gamma * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) / (s_label[b] * double(valid));
    for (std::size_t i = 0; i < per; ++i) out.grad[b * per + i] = T(g);
  }
  out.value = T(gamma * acc / double(valid));
  return out;
}

/// Edge-weighted adversarial feedback: -sum_k w_k log(1 - a_k) / sum_k w_k, where a is the
/// discriminator's abnormality map on the reconstruction and w the edge attention weights.
/// Returns 0 (and zero gradients) when every weight is zero.
template <class T>
struct AdvLoss {
  T value = T(0);
  Array<T> grad_map, grad_edge;
  bool no_boundary_signal = false;
};

template <class T>
AdvLoss<T> adv_feedback_loss(const Array<T>& abnormality, const Array<T>& edge) {
  require_same_shape(abnormality, edge, "adv_feedback_loss");
  AdvLoss<T> out;
  out.grad_map = Array<T>(abnormality.shape(), T(0));
  out.grad_edge = Array<T>(edge.shape(), T(0));
  double wsum = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < edge.size(); ++i) {
    wsum += edge[i];
    if (edge[i] != T(0)) acc -= double(edge[i]) * std::log(1.0 - double(detail::clamp_prob(abnormality[i])));
  }
  if (!(wsum > 0.0)) {
    out.no_boundary_signal = true;
    return out;
  }
  const double value = acc / wsum;
  out.value = T(value);
  for (std::size_t i = 0; i < edge.size(); ++i) {
    const double a = abnormality[i];
    out.grad_map[i] = T(double(edge[i]) * -double(detail::dlog1m_clamped(abnormality[i])) / wsum);
    out.grad_edge[i] = T((-std::log(1.0 - double(detail::clamp_prob(T(a)))) - value) / wsum);
  }
  return out;
}

/// The four phase-2 terms of the composite objective.
enum class Term : std::size_t { seg = 0, sparsity = 1, adv = 2, size = 3 };
inline constexpr std::size_t kTerms = 4;
inline constexpr std::array<const char*, kTerms> kTermNames = {"seg", "sparsity", "adv", "size"};

struct DynamicWeights {
  std::array<double, kTerms> raw{};         // 1 / (||grad|| + eps)
  std::array<double, kTerms> normalized{};  // rescaled to sum to the number of active terms
};

/// lambda_i = 1 / (||grad L_i|| + eps), renormalized over the active terms.
inline DynamicWeights dynamic_weights(const std::array<double, kTerms>& grad_norms, double eps,
                                      const std::array<bool, kTerms>& active = {true, true, true, true}) {
  DynamicWeights w;
  double sum = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < kTerms; ++i) {
    w.raw[i] = 1.0 / (std::max(grad_norms[i], 0.0) + eps);
    if (active[i]) {
      sum += w.raw[i];
      ++k;
    }
  }
  for (std::size_t i = 0; i < kTerms; ++i) w.normalized[i] = active[i] && sum > 0.0 ? w.raw[i] * double(k) / sum : 0.0;
  return w;
}

struct LossConstants {
  double alpha = 0.1;        // sparsity coefficient
  double gamma = 1.0;        // size coefficient
  double eps = 1e-8;         // weight-balance guard
  double dice_smooth = 1e-6;
  double ema_momentum = 0.9;  // smoothing of per-term gradient norms
  int phase1_last_epoch = 10;
  bool dynamic_seg_weight = true;  // false: lambda_seg fixed at 1, the others balanced among themselves
  bool edge_gradient = false;      // backpropagate through the edge attention instead of treating it as a constant gate

  void validate() const;
};

inline void LossConstants::validate() const {
  if (!(alpha >= 0.0) || !(gamma >= 0.0)) throw ValidationError("loss alpha/gamma must be >= 0");
  if (!(eps > 0.0)) throw ValidationError("loss eps must be > 0");
  if (!(dice_smooth > 0.0)) throw ValidationError("dice smoothing must be > 0");
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) throw ValidationError("ema_momentum must be in [0,1)");
  if (phase1_last_epoch < -1) throw ValidationError("phase1_last_epoch must be >= -1");
}

/// Phase 1 covers epochs 0..phase1_last_epoch (segmentation loss only); phase 2 afterwards.
inline int phase_for_epoch(int epoch, int phase1_last_epoch = 10) { return epoch <= phase1_last_epoch ? 1 : 2; }

struct LossLedger {
  // Scalar values of every term recorded this step.
  double d_gan = 0, g_gan = 0, ce = 0, dice = 0, sparsity = 0, size = 0, adv = 0;
  std::array<double, kTerms> grad_norms{};  // smoothed estimates
  std::array<double, kTerms> weights{};     // weights actually applied
  int phase = 1;

  double seg() const { return ce + dice; }
  double term(Term t) const {
    switch (t) {
      case Term::seg: return seg();
      case Term::sparsity: return sparsity;
      case Term::adv: return adv;
      case Term::size: return size;
    }
    return 0.0;
  }
};

struct TotalLoss {
  double value = 0.0;
  std::array<double, kTerms> weights{};
  int phase = 1;
};

/// Composite objective. Phase 1: L_ce + L_dice. Phase 2: sum_i lambda_i L_i with dynamic weights
/// derived from ledger.grad_norms.
inline TotalLoss total_loss(const LossLedger& ledger, int epoch, const LossConstants& k) {
  TotalLoss out;
  out.phase = phase_for_epoch(epoch, k.phase1_last_epoch);
  if (out.phase == 1) {
    out.weights = {1.0, 0.0, 0.0, 0.0};
  } else if (k.dynamic_seg_weight) {
    out.weights = dynamic_weights(ledger.grad_norms, k.eps).normalized;
  } else {
    const auto w = dynamic_weights(ledger.grad_norms, k.eps, {false, true, true, true});
    out.weights = w.normalized;
    out.weights[0] = 1.0;
  }
  for (std::size_t i = 0; i < kTerms; ++i) out.value += out.weights[i] * ledger.term(Term(i));
  return out;
}

/// Exponential moving average of gradient norms; the first observation initializes the average.
class GradNormTracker {
 public:
  explicit GradNormTracker(double momentum = 0.9) : momentum_(momentum) {}

  const std::array<double, kTerms>& update(const std::array<double, kTerms>& norms) {
    for (std::size_t i = 0; i < kTerms; ++i) {
      ema_[i] = seen_ ? momentum_ * ema_[i] + (1.0 - momentum_) * norms[i] : norms[i];
    }
    seen_ = true;
    return ema_;
  }
  const std::array<double, kTerms>& value() const { return ema_; }

 private:
  double momentum_;
  bool seen_ = false;
  std::array<double, kTerms> ema_{};
};

}  // namespace brainseg
