#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "brainseg/container.hpp"
#include "brainseg/dataset.hpp"
#include "brainseg/edge_ops.hpp"
#include "brainseg/losses.hpp"
#include "brainseg/metrics.hpp"
#include "brainseg/nets.hpp"
#include "brainseg/optim.hpp"

namespace brainseg {

struct PretrainConfig {
  double occlusion_min = 0.1;  // occluded fraction of the brain bounding box
  double occlusion_max = 0.4;
  std::size_t d_update_period = 5;
  int early_stop_patience = 5;
  int epochs = 10;
  double recon_weight = 10.0;  // L1 on the occluded region, pretraining only

  void validate() const {
    if (!(occlusion_min > 0.0 && occlusion_min <= occlusion_max && occlusion_max <= 1.0))
      throw ValidationError("pretrain occlusion fractions must satisfy 0 < min <= max <= 1");
    if (d_update_period < 1) throw ValidationError("pretrain d_update_period must be >= 1");
    if (early_stop_patience < 1) throw ValidationError("pretrain early_stop_patience must be >= 1");
    if (epochs < 1) throw ValidationError("pretrain epochs must be >= 1");
    if (!(recon_weight >= 0.0)) throw ValidationError("pretrain recon_weight must be >= 0");
  }
};

/// normality: slice flagged when 1 - score < threshold (sensitivity rises with the threshold).
/// abnormality: slice flagged when score >= threshold.
enum class SweepOrientation { normality, abnormality };

struct SweepConfig {
  std::vector<double> thresholds = {0.1, 0.2, 0.3, 0.4};
  SweepOrientation orientation = SweepOrientation::normality;
  bool gated = false;  // gate the patch map by the segmenter's edge attention

  void validate() const {
    if (thresholds.empty()) throw ValidationError("sweep needs at least one threshold");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) throw ValidationError("sweep thresholds must lie in (0,1)");
      if (i > 0 && !(thresholds[i] > thresholds[i - 1]))
        throw ValidationError("sweep thresholds must be strictly increasing");
    }
  }
};

inline constexpr float kOcclusionFill = 0.0f;

/// images * (1 - mask) + fill * mask. mask is [B,H,W], [B,1,H,W] or the images' shape.
template <class T>
Array<T> occlude(const Array<T>& images, const Array<T>& mask, T fill = T(kOcclusionFill)) {
  nn::require_nchw(images.shape(), "occlude");
  const std::size_t B = images.dim(0), C = images.dim(1), area = images.dim(2) * images.dim(3);
  const bool full = mask.shape() == images.shape();
  if (!full && mask.size() != B * area) throw ShapeError("occlude: mask " + shape_str(mask.shape()) +
                                                         " does not broadcast to " + shape_str(images.shape()));
  Array<T> out(images.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < area; ++i) {
        const std::size_t k = (b * C + c) * area + i;
        const T m = full ? mask[k] : mask[b * area + i];
        out[k] = images[k] * (T(1) - m) + fill * m;
      }
  return out;
}

/// Binary rectangle covering a random fraction of the sample's brain bounding box.
inline Array<float> random_occlusion(const Sample& s, const PretrainConfig& cfg, Rng& rng) {
  const std::size_t H = s.label.dim(0), W = s.label.dim(1);
  const double bh = double(s.brain.rows()), bw = double(s.brain.cols());
  const double frac = uniform(rng, cfg.occlusion_min, cfg.occlusion_max);
  const double aspect = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
  const double area = frac * bh * bw;
  const auto w = std::size_t(std::clamp(std::round(std::sqrt(area * aspect)), 1.0, bw));
  const auto h = std::size_t(std::clamp(std::round(area / double(w)), 1.0, bh));
  const std::size_t r0 = s.brain.row_min + std::size_t(uniform_int(rng, 0, long(s.brain.rows() - h)));
  const std::size_t c0 = s.brain.col_min + std::size_t(uniform_int(rng, 0, long(s.brain.cols() - w)));
  Array<float> m({H, W}, 0.0f);
  for (std::size_t r = r0; r < r0 + h; ++r)
    for (std::size_t c = c0; c < c0 + w; ++c) m(r, c) = 1.0f;
  return m;
}

/// Sinks for the line-delimited JSON training log and progress messages.
struct TrainHooks {
  std::ostream* log = nullptr;
  std::function<void(const std::string&)> heartbeat;

  void write(const Json& j) const {
    if (log) *log << j.dump() << '\n';
  }
  void beat(const std::string& msg) const {
    if (heartbeat) heartbeat(msg);
  }
};

namespace detail {

inline void guard_finite(double v, const char* what, long step) {
  if (!std::isfinite(v))
    throw DivergenceError(std::string(what) + " became non-finite at step " + std::to_string(step));
}

inline std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, stream);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[std::size_t(uniform_int(rng, 0, long(i) - 1))]);
  return idx;
}

template <class Net>
struct Snapshot {
  std::vector<Array<typename std::remove_cvref_t<decltype(std::declval<Net&>().params()[0]->value)>::value_type>> values;

  void take(const Net& net) {
    values.clear();
    for (const auto* p : net.params()) values.push_back(p->value);
  }
  void restore(Net& net) const {
    auto ps = net.params();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = values[i];
  }
};

/// x * (1 - M) + R * M with M broadcast over channels.
template <class T>
Array<T> composite(const Array<T>& x, const Array<T>& recon, const Array<T>& mask) {
  const std::size_t B = x.dim(0), C = x.dim(1), area = x.dim(2) * x.dim(3);
  Array<T> out(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < area; ++i) {
        const std::size_t k = (b * C + c) * area + i;
        const T m = mask[b * area + i];
        out[k] = x[k] * (T(1) - m) + recon[k] * m;
      }
  return out;
}

/// Mean |R - x| over occluded pixels and channels; gradient w.r.t. R scaled by `weight`.
template <class T>
LossValue<T> masked_l1(const Array<T>& recon, const Array<T>& x, const Array<T>& mask, double weight) {
  const std::size_t B = x.dim(0), C = x.dim(1), area = x.dim(2) * x.dim(3);
  double msum = 0.0;
  for (auto v : mask) msum += v;
  LossValue<T> out{T(0), Array<T>(x.shape(), T(0))};
  if (!(msum > 0.0)) return out;
  const double norm = msum * double(C);
  double acc = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < area; ++i) {
        const std::size_t k = (b * C + c) * area + i;
        const double m = mask[b * area + i], d = double(recon[k]) - double(x[k]);
        acc += std::abs(d) * m;
        out.grad[k] = T(weight * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * m / norm);
      }
  out.value = T(acc / norm);
  return out;
}

template <class T>
Array<T> to_float_array(const Array<float>& a) {
  if constexpr (std::is_same_v<T, float>) return a;
  else return a.template cast<T>();
}

}  // namespace detail

/// Patience counter on a monitored loss (lower is better).
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  /// Records one epoch's value; returns true when it improves on the best so far.
  bool observe(int epoch, double value) {
    if (value < best_) {
      best_ = value;
      best_epoch_ = epoch;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }
  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int stale_ = 0;
  int best_epoch_ = -1;
  double best_ = std::numeric_limits<double>::infinity();
};

template <class T>
struct PretrainResult {
  Generator<T> generator;
  Discriminator<T> discriminator;
  long generator_updates = 0;
  long discriminator_updates = 0;
  int epochs_run = 0;
  int best_epoch = -1;
  bool stopped_early = false;
  std::vector<double> val_l1;  // per epoch
};

/// Mean masked L1 of the generator's inpainting over `samples`, with occlusions fixed by `seed`.
template <class T>
double reconstruction_l1(const Generator<T>& G, const std::vector<Sample>& samples, const PretrainConfig& cfg,
                         std::uint64_t seed, std::size_t batch_size) {
  if (samples.empty()) throw DataError("reconstruction_l1: no samples");
  double acc = 0.0;
  std::size_t n = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(samples, idx);
    const std::size_t H = b.images.dim(2), W = b.images.dim(3);
    Array<T> mask({idx.size(), 1, H, W});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Rng rng = make_rng(seed, 0xA11D0000ULL + idx[k]);
      const auto m = random_occlusion(samples[idx[k]], cfg, rng);
      std::copy(m.begin(), m.end(), mask.data() + k * H * W);
    }
    const Array<T> x = detail::to_float_array<T>(b.images);
    const Array<T> recon = gen_forward(G, occlude(x, mask));
    acc += double(detail::masked_l1(recon, x, mask, 1.0).value) * double(idx.size());
    n += idx.size();
  }
  return acc / double(n);
}

/// Inpainting GAN pretraining on normal slices. The generator minimizes the adversarial loss on
/// composites plus an L1 term on the occluded region; the discriminator is updated once every
/// d_update_period generator updates. Early stopping watches the validation L1 (training L1
/// when no validation slices are given) and the best epoch's weights are returned.
template <class T = float>
PretrainResult<T> pretrain_gan(const std::vector<Sample>& train, const std::vector<Sample>& val,
                               const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg,
                               const PretrainConfig& cfg, const OptimizerConfig& opt, std::uint64_t seed,
                               const TrainHooks& hooks = {}) {
  cfg.validate();
  opt.validate();
  if (train.empty()) throw DataError("pretrain_gan: empty training dataset");
  PretrainResult<T> res{build_generator<T>(gcfg, mix_seed(seed, 1)), build_discriminator<T>(dcfg, mix_seed(seed, 2))};
  auto& G = res.generator;
  auto& D = res.discriminator;
  Adam<T> adam_g(G.params(), opt), adam_d(D.params(), opt);
  detail::Snapshot<Generator<T>> best_g;
  detail::Snapshot<Discriminator<T>> best_d;
  EarlyStopper stopper(cfg.early_stop_patience);
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(opt.alpha0, epoch, cfg.epochs, opt.lr_power);
    const auto order = detail::shuffled(train.size(), seed, 0x9E000000ULL + std::uint64_t(epoch));
    Rng occ_rng = make_rng(seed, 0x0CC00000ULL + std::uint64_t(epoch));
    double train_l1 = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(opt.batch_size, order.size() - start));
      const Batch b = make_batch(train, idx);
      const std::size_t B = idx.size(), H = b.images.dim(2), W = b.images.dim(3);
      Array<T> mask({B, 1, H, W});
      for (std::size_t k = 0; k < B; ++k) {
        const auto m = random_occlusion(train[idx[k]], cfg, occ_rng);
        std::copy(m.begin(), m.end(), mask.data() + k * H * W);
      }
      const Array<T> x = detail::to_float_array<T>(b.images);

      // Generator update through a frozen discriminator.
      nn::Tape<T> tg, td;
      const Array<T> recon = gen_forward(G, occlude(x, mask), &tg);
      const Array<T> comp = detail::composite(x, recon, mask);
      nn::set_trainable(D, false);
      const Array<T> fake = disc_forward(D, comp, &td);
      const auto gl = gen_loss(fake);
      const auto l1 = detail::masked_l1(recon, x, mask, cfg.recon_weight);
      detail::guard_finite(gl.value, "generator loss", step);
      detail::guard_finite(l1.value, "reconstruction loss", step);
      const Array<T> dcomp = D.backward(gl.grad, td);
      nn::set_trainable(D, true);
      Array<T> drecon(recon.shape());
      const std::size_t C = x.dim(1), area = H * W;
      for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < area; ++i) {
            const std::size_t k = (bb * C + c) * area + i;
            drecon[k] = dcomp[k] * mask[bb * area + i] + l1.grad[k];
          }
      nn::zero_grad(G);
      G.backward(drecon, tg);
      adam_g.step(lr);
      ++res.generator_updates;

      Json line = {{"type", "step"}, {"stage", "pretrain"}, {"step", step}, {"epoch", epoch}, {"lr", lr},
                   {"g_gan", double(gl.value)}, {"recon_l1", double(l1.value)},
                   {"generator_updates", res.generator_updates}};
      if (res.generator_updates % long(cfg.d_update_period) == 0) {
        nn::Tape<T> tr, tf;
        const Array<T> real_scores = disc_forward(D, x, &tr);
        const Array<T> fake_scores = disc_forward(D, comp, &tf);
        const auto dl = disc_loss(real_scores, fake_scores);
        detail::guard_finite(dl.value, "discriminator loss", step);
        nn::zero_grad(D);
        D.backward(dl.grad_real, tr);
        D.backward(dl.grad_fake, tf);
        adam_d.step(lr);
        ++res.discriminator_updates;
        line["d_gan"] = double(dl.value);
      }
      line["discriminator_updates"] = res.discriminator_updates;
      hooks.write(line);
      train_l1 += double(l1.value) * double(B);
      seen += B;
      ++step;
    }
    train_l1 /= double(seen);
    const double monitor = val.empty() ? train_l1 : reconstruction_l1(G, val, cfg, seed, opt.batch_size);
    res.val_l1.push_back(monitor);
    res.epochs_run = epoch + 1;
    if (stopper.observe(epoch, monitor)) {
      res.best_epoch = epoch;
      best_g.take(G);
      best_d.take(D);
    }
    hooks.write({{"type", "epoch"}, {"stage", "pretrain"}, {"epoch", epoch}, {"lr", lr}, {"train_l1", train_l1},
                 {"val_l1", monitor}, {"generator_updates", res.generator_updates},
                 {"discriminator_updates", res.discriminator_updates}});
    hooks.beat("pretrain epoch " + std::to_string(epoch) + " val_l1 " + std::to_string(monitor));
    if (stopper.should_stop()) {
      res.stopped_early = true;
      break;
    }
  }
  best_g.restore(G);
  best_d.restore(D);
  return res;
}

/// Whole-tumor probability 1 - p(background) as [B,1,H,W].
template <class T>
Array<T> whole_tumor_mask(const Array<T>& probs) {
  const std::size_t B = probs.dim(0), C = probs.dim(1), area = probs.dim(2) * probs.dim(3);
  Array<T> m({B, 1, probs.dim(2), probs.dim(3)});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < area; ++i) m[b * area + i] = T(1) - probs[b * C * area + i];
  return m;
}

/// Per-slice soft Dice of the whole-tumor mask; 1 when both mask and truth are empty.
template <class T>
std::vector<double> soft_wt_dice(const Array<T>& probs, const Batch& batch) {
  const std::size_t B = probs.dim(0), C = probs.dim(1), area = probs.dim(2) * probs.dim(3);
  std::vector<double> out;
  for (std::size_t b = 0; b < B; ++b) {
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t i = 0; i < area; ++i) {
      const double p = 1.0 - double(probs[b * C * area + i]);
      const double t = 1.0 - double(batch.onehot[b * C * area + i]);
      inter += p * t;
      sp += p;
      st += t;
    }
    out.push_back(sp + st > 0.0 ? 2.0 * inter / (sp + st) : 1.0);
  }
  return out;
}

struct AdversarialTerms {
  double adv = 0.0, g_gan = 0.0, d_gan = 0.0;
  bool no_boundary_signal = false;
};

/// Runs mask -> occlusion -> frozen generator -> composite -> frozen discriminator -> edge-gated
/// feedback and accumulates d(L_adv)/dM into `dmask` ([B,1,H,W]). The edge weights are a constant
/// gate unless `edge_gradient` is set.
template <class T>
AdversarialTerms adversarial_feedback(const Array<T>& x, const Array<T>& mask, Generator<T>& G, Discriminator<T>& D,
                                      Array<T>& dmask, bool edge_gradient = false) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), area = H * W;
  nn::Tape<T> tg, td;
  const Array<T> occ = occlude(x, mask);
  const Array<T> recon = gen_forward(G, occ, &tg);
  const Array<T> comp = detail::composite(x, recon, mask);
  const Array<T> real_prob = disc_forward(D, comp, &td);  // [B,1,h,w]
  const std::size_t h = real_prob.dim(2), w = real_prob.dim(3);

  Array<T> abnormality(real_prob.shape()), edges(real_prob.shape());
  for (std::size_t i = 0; i < real_prob.size(); ++i) abnormality[i] = T(1) - real_prob[i];
  Array<T> mb({H, W});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(mask.data() + b * area, area, mb.data());
    const EdgeMap<T> e = edge_attention(mb);
    if (e.values.dim(0) != h || e.values.dim(1) != w)
      throw ShapeError("edge map " + shape_str(e.values.shape()) + " does not align with discriminator map");
    std::copy(e.values.begin(), e.values.end(), edges.data() + b * h * w);
  }
  const auto adv = adv_feedback_loss(abnormality, edges);
  AdversarialTerms out;
  out.adv = double(adv.value);
  out.no_boundary_signal = adv.no_boundary_signal;
  out.g_gan = double(gen_loss(real_prob).value);
  out.d_gan = double(disc_loss(disc_forward(D, x), real_prob).value);

  Array<T> dprob(real_prob.shape());
  for (std::size_t i = 0; i < dprob.size(); ++i) dprob[i] = -adv.grad_map[i];
  const Array<T> dcomp = D.backward(dprob, td);
  Array<T> drecon(recon.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < area; ++i) {
        const std::size_t k = (b * C + c) * area + i;
        drecon[k] = dcomp[k] * mask[b * area + i];
        dmask[b * area + i] += dcomp[k] * (recon[k] - x[k]);
      }
  const Array<T> docc = G.backward(drecon, tg);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < area; ++i) {
        const std::size_t k = (b * C + c) * area + i;
        dmask[b * area + i] += docc[k] * (T(kOcclusionFill) - x[k]);
      }
  if (!edge_gradient) return out;
  Array<T> ge({h, w});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(mask.data() + b * area, area, mb.data());
    std::copy_n(adv.grad_edge.data() + b * h * w, h * w, ge.data());
    const Array<T> dm = edge_attention_backward(mb, ge);
    for (std::size_t i = 0; i < area; ++i) dmask[b * area + i] += dm[i];
  }
  return out;
}

template <class T>
struct SegTrainResult {
  Segmenter<T> segmenter;
  std::vector<double> val_dice;  // per epoch
  long steps = 0;
};

/// Mean whole-tumor soft Dice over samples.
template <class T>
double mean_soft_dice(const Segmenter<T>& S, const std::vector<Sample>& samples, std::size_t batch_size) {
  if (samples.empty()) throw DataError("mean_soft_dice: no samples");
  double acc = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(samples, idx);
    for (double d : soft_wt_dice(seg_forward(S, detail::to_float_array<T>(b.images)), b)) acc += d;
  }
  return acc / double(samples.size());
}

/// Segmenter training with frozen G and D. Phase 1 optimizes L_ce + L_dice; phase 2 adds
/// sparsity, size and edge-gated adversarial feedback with dynamic gradient-norm weights
/// measured on the segmenter's head parameters.
template <class T = float>
SegTrainResult<T> train_seg(const std::vector<Sample>& train, const std::vector<Sample>& val, const UNetConfig& ucfg,
                            Generator<T>& G, Discriminator<T>& D, const OptimizerConfig& opt,
                            const LossConstants& k, std::uint64_t seed, const TrainHooks& hooks = {}) {
  opt.validate();
  k.validate();
  if (train.empty()) throw DataError("train_seg: empty training dataset");
  if (train.front().image.dim(0) != ucfg.in_channels)
    throw ShapeError("train_seg: samples have " + std::to_string(train.front().image.dim(0)) +
                     " channels, segmenter expects " + std::to_string(ucfg.in_channels));
  if (G.config().in_channels != train.front().image.dim(0))
    throw ShapeError("train_seg: generator channel count does not match the data");

  const std::uint64_t g_hash = nn::parameter_hash(G), d_hash = nn::parameter_hash(D);
  nn::set_trainable(G, false);
  nn::set_trainable(D, false);

  SegTrainResult<T> res{build_segmenter<T>(ucfg, mix_seed(seed, 3))};
  auto& S = res.segmenter;
  Adam<T> adam(S.params(), opt);
  GradNormTracker tracker(k.ema_momentum);
  long step = 0;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const double lr = lr_schedule(opt.alpha0, epoch, opt.epochs, opt.lr_power);
    const int phase = phase_for_epoch(epoch, k.phase1_last_epoch);
    const auto order = detail::shuffled(train.size(), seed, 0x5E000000ULL + std::uint64_t(epoch));
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(opt.batch_size, order.size() - start));
      const Batch b = make_batch(train, idx);
      const Array<T> x = detail::to_float_array<T>(b.images);
      const Array<T> y = detail::to_float_array<T>(b.onehot);
      const std::size_t B = idx.size(), C = y.dim(1), area = x.dim(2) * x.dim(3);

      nn::Tape<T> ts;
      const Array<T> probs = seg_forward(S, x, &ts);
      const auto ce = ce_loss(probs, y);
      const auto dice = region_dice_loss(probs, y, k.dice_smooth);
      const Array<T> mask = whole_tumor_mask(probs);
      const auto sp = sparsity_loss(mask, k.alpha);
      const auto sz = size_loss(mask, b.tumor_pixels, k.gamma);

      LossLedger ledger;
      ledger.phase = phase;
      ledger.ce = double(ce.value);
      ledger.dice = double(dice.value);
      ledger.sparsity = double(sp.value);
      ledger.size = double(sz.value);

      // d(term)/d(probs) per term; mask terms act on channel 0 with a sign flip.
      std::array<Array<T>, kTerms> grads;
      grads[0] = ce.grad;
      nn::add_inplace(grads[0], dice.grad);
      auto from_mask = [&](const Array<T>& dm) {
        Array<T> g(probs.shape(), T(0));
        for (std::size_t bb = 0; bb < B; ++bb)
          for (std::size_t i = 0; i < area; ++i) g[bb * C * area + i] = -dm[bb * area + i];
        return g;
      };
      grads[std::size_t(Term::sparsity)] = from_mask(sp.grad);
      grads[std::size_t(Term::size)] = from_mask(sz.grad);

      std::optional<AdversarialTerms> advt;
      if (phase == 2) {
        Array<T> dm(mask.shape(), T(0));
        advt = adversarial_feedback(x, mask, G, D, dm, k.edge_gradient);
        ledger.adv = advt->adv;
        ledger.g_gan = advt->g_gan;
        ledger.d_gan = advt->d_gan;
        grads[std::size_t(Term::adv)] = from_mask(dm);
        std::array<double, kTerms> norms{};
        for (std::size_t t = 0; t < kTerms; ++t) {
          double s2 = 0.0;
          for (T g : S.head_gradient(grads[t], ts)) s2 += double(g) * double(g);
          norms[t] = std::sqrt(s2);
        }
        ledger.grad_norms = tracker.update(norms);
      } else {
        grads[std::size_t(Term::adv)] = Array<T>(probs.shape(), T(0));
      }
      const TotalLoss total = total_loss(ledger, epoch, k);
      ledger.weights = total.weights;
      detail::guard_finite(total.value, "segmentation loss", step);

      Array<T> dprobs(probs.shape(), T(0));
      for (std::size_t t = 0; t < kTerms; ++t) {
        if (total.weights[t] == 0.0) continue;
        const T wt = T(total.weights[t]);
        for (std::size_t i = 0; i < dprobs.size(); ++i) dprobs[i] += wt * grads[t][i];
      }
      nn::zero_grad(S);
      S.backward(dprobs, ts);
      adam.step(lr);

      Json losses = {{"ce", ledger.ce}, {"dice", ledger.dice}, {"seg", ledger.seg()}, {"sparsity", ledger.sparsity},
                     {"size", ledger.size}, {"total", total.value}};
      losses["adv"] = advt ? Json(ledger.adv) : Json(nullptr);
      losses["g_gan"] = advt ? Json(ledger.g_gan) : Json(nullptr);
      losses["d_gan"] = advt ? Json(ledger.d_gan) : Json(nullptr);
      Json weights, norms;
      for (std::size_t t = 0; t < kTerms; ++t) {
        weights[kTermNames[t]] = total.weights[t];
        norms[kTermNames[t]] = advt ? Json(ledger.grad_norms[t]) : Json(nullptr);
      }
      Json line = {{"type", "step"}, {"stage", "train_seg"}, {"step", step}, {"epoch", epoch}, {"phase", phase},
                   {"lr", lr}, {"losses", losses}, {"weights", weights}, {"grad_norms", norms}};
      if (advt && advt->no_boundary_signal) line["no_boundary_signal"] = true;
      hooks.write(line);
      epoch_loss += total.value;
      ++batches;
      ++step;
    }
    const double vd = val.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_soft_dice(S, val, opt.batch_size);
    res.val_dice.push_back(vd);
    hooks.write({{"type", "epoch"}, {"stage", "train_seg"}, {"epoch", epoch}, {"phase", phase}, {"lr", lr},
                 {"train_loss", epoch_loss / double(batches)}, {"val_dice", val.empty() ? Json(nullptr) : Json(vd)}});
    hooks.beat("train-seg epoch " + std::to_string(epoch) + " phase " + std::to_string(phase) + " val_dice " +
               std::to_string(vd));
  }
  res.steps = step;
  if (nn::parameter_hash(G) != g_hash || nn::parameter_hash(D) != d_hash)
    throw std::logic_error("train_seg modified a frozen network");
  return res;
}

/// Argmax class labels {0,1,2,4} per pixel: [B,H,W].
template <class T>
Array<std::uint8_t> predict_labels(const Array<T>& probs) {
  const std::size_t B = probs.dim(0), C = probs.dim(1), area = probs.dim(2) * probs.dim(3);
  Array<std::uint8_t> out({B, probs.dim(2), probs.dim(3)});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < area; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (probs[(b * C + c) * area + i] > probs[(b * C + best) * area + i]) best = c;
      out[b * area + i] = kClassLabels[best];
    }
  return out;
}

struct SampleEvaluation {
  std::string subject_id;
  std::size_t slice_index = 0;
  double soft_wt_dice = 0.0;
  std::vector<LesionReport> regions;  // WT, TC, ET
};

/// Soft whole-tumor Dice plus hard-label region metrics for every sample (each slice treated as a
/// single-slice volume with unit spacing).
template <class T>
std::vector<SampleEvaluation> evaluate_segmenter(const Segmenter<T>& S, const std::vector<Sample>& samples,
                                                 std::size_t batch_size, const EvalOptions& eopt = {}) {
  std::vector<SampleEvaluation> out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(samples, idx);
    const Array<T> probs = seg_forward(S, detail::to_float_array<T>(b.images));
    const auto soft = soft_wt_dice(probs, b);
    const auto labels = predict_labels(probs);
    const std::size_t H = labels.dim(1), W = labels.dim(2);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Sample& s = samples[idx[k]];
      Array<std::uint8_t> pred({1, H, W}), truth({1, H, W});
      std::copy_n(labels.data() + k * H * W, H * W, pred.data());
      std::copy(s.label.begin(), s.label.end(), truth.data());
      out.push_back({s.subject_id, s.slice_index, soft[k], evaluate(pred, truth, {1.0, 1.0, 1.0}, eopt)});
    }
  }
  return out;
}

struct SweepRow {
  double threshold = 0.0;
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
  double accuracy = 0.0;
  std::optional<double> sensitivity;  // missing without tumor slices
};

/// Tallies slice-level decisions at every threshold. `scores` are abnormality scores in [0,1].
inline std::vector<SweepRow> threshold_sweep(const std::vector<double>& scores, const std::vector<bool>& tumor,
                                             const SweepConfig& cfg) {
  cfg.validate();
  if (scores.empty()) throw DataError("threshold_sweep: empty dataset");
  if (scores.size() != tumor.size()) throw ShapeError("threshold_sweep: one truth flag per score");
  std::vector<SweepRow> rows;
  for (double thr : cfg.thresholds) {
    SweepRow r;
    r.threshold = thr;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool flagged =
          cfg.orientation == SweepOrientation::abnormality ? scores[i] >= thr : (1.0 - scores[i]) < thr;
      if (tumor[i]) (flagged ? r.tp : r.fn)++;
      else (flagged ? r.fp : r.tn)++;
    }
    r.accuracy = double(r.tp + r.tn) / double(scores.size());
    if (r.tp + r.fn > 0) r.sensitivity = double(r.tp) / double(r.tp + r.fn);
    rows.push_back(r);
  }
  return rows;
}

/// Slice abnormality score: max over the discriminator's patch map of 1 - p(real), optionally
/// gated by the edge attention of the segmenter's whole-tumor mask.
template <class T>
std::vector<double> slice_scores(const Discriminator<T>& D, const std::vector<Sample>& samples, std::size_t batch_size,
                                 const Segmenter<T>* gate_with = nullptr) {
  std::vector<double> out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(samples, idx);
    const Array<T> x = detail::to_float_array<T>(b.images);
    const Array<T> pm = disc_forward(D, x);
    const std::size_t h = pm.dim(2), w = pm.dim(3), H = x.dim(2), W = x.dim(3);
    std::optional<Array<T>> mask;
    if (gate_with) mask = whole_tumor_mask(seg_forward(*gate_with, x));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Array<T> a({h, w});
      for (std::size_t i = 0; i < h * w; ++i) a[i] = T(1) - pm[k * h * w + i];
      if (mask) {
        Array<T> mb({H, W});
        std::copy_n(mask->data() + k * H * W, H * W, mb.data());
        a = gate(a, edge_attention(mb));
      }
      out.push_back(double(*std::max_element(a.begin(), a.end())));
    }
  }
  return out;
}

}  // namespace brainseg
