#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "json.hpp"
#include "brainseg/nn/layers.hpp"

namespace brainseg {

/// 2D U-Net: two 3x3 conv + IN + ReLU per stage, 2x2 max-pool down, 2x2 transposed conv up,
/// skip connections by channel concatenation, 1x1 conv head. The last entry of
/// encoder_channels is the bottleneck width.
struct UNetConfig {
  std::size_t in_channels = 4;
  std::vector<std::size_t> encoder_channels = {64, 128, 256, 320};
  std::size_t out_channels = 4;

  std::size_t levels() const { return encoder_channels.size(); }
  std::size_t divisor() const { return std::size_t{1} << (levels() - 1); }

  void validate() const {
    if (in_channels == 0 || out_channels == 0) throw ConstructionError("unet: channel counts must be positive");
    if (encoder_channels.size() < 2) throw ConstructionError("unet: need at least one encoder stage and a bottleneck");
    for (auto c : encoder_channels)
      if (c == 0) throw ConstructionError("unet: encoder channel chain contains 0");
  }
};

/// Inpainting generator: a U-Net whose head emits modality channels through tanh.
struct GeneratorConfig {
  std::size_t channels = 4;  // in == out == modality count
  std::vector<std::size_t> encoder_channels = {16, 32, 64, 80};

  UNetConfig as_unet() const { return {channels, encoder_channels, channels}; }
  void validate() const { as_unet().validate(); }
};

/// Patch discriminator with total downsampling factor `downsample`:
/// conv3x3 -> LReLU -> conv(k=s=downsample, ceil) -> LReLU -> conv3x3 -> LReLU -> conv1x1 -> sigmoid.
struct DiscriminatorConfig {
  std::size_t in_channels = 4;
  std::size_t base_channels = 16;
  std::size_t downsample = 5;
  double leaky_slope = 0.2;

  void validate() const {
    if (in_channels == 0 || base_channels == 0) throw ConstructionError("discriminator: channel counts must be positive");
    if (downsample == 0) throw ConstructionError("discriminator: downsample must be >= 1");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConstructionError("discriminator: leaky_slope in [0,1)");
  }
  std::size_t out_size(std::size_t n) const { return (n + downsample - 1) / downsample; }
};

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"in_channels", c.in_channels}, {"encoder_channels", c.encoder_channels}, {"out_channels", c.out_channels}};
}
inline void from_json(const nlohmann::json& j, UNetConfig& c) {
  j.at("in_channels").get_to(c.in_channels);
  j.at("encoder_channels").get_to(c.encoder_channels);
  j.at("out_channels").get_to(c.out_channels);
}
inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"channels", c.channels}, {"encoder_channels", c.encoder_channels}};
}
inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  j.at("channels").get_to(c.channels);
  j.at("encoder_channels").get_to(c.encoder_channels);
}
inline void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"base_channels", c.base_channels},
       {"downsample", c.downsample},
       {"leaky_slope", c.leaky_slope}};
}
inline void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  j.at("in_channels").get_to(c.in_channels);
  j.at("base_channels").get_to(c.base_channels);
  j.at("downsample").get_to(c.downsample);
  j.at("leaky_slope").get_to(c.leaky_slope);
}

namespace nn {

template <class T>
struct ConvBlock {
  Conv2d<T> conv1, conv2;
  InstanceNorm<T> norm1, norm2;
  ReLU<T> act1, act2;

  ConvBlock() = default;
  ConvBlock(const std::string& name, std::size_t in, std::size_t out)
      : conv1(name + ".conv1", in, out, 3, 1, Padding::same, false),
        conv2(name + ".conv2", out, out, 3, 1, Padding::same, false),
        norm1(name + ".norm1", out), norm2(name + ".norm2", out) {}

  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    Array<T> h = act1.forward(norm1.forward(conv1.forward(x, tape), tape), tape);
    return act2.forward(norm2.forward(conv2.forward(h, tape), tape), tape);
  }
  Array<T> backward(const Array<T>& dy, const Tape<T>& tape) {
    Array<T> g = conv2.backward(norm2.backward(act2.backward(dy, tape), tape), tape);
    return conv1.backward(norm1.backward(act1.backward(g, tape), tape), tape);
  }
  template <class P>
  void params(std::vector<P>& out) {
    conv1.params(out);
    norm1.params(out);
    conv2.params(out);
    norm2.params(out);
  }
  template <class P>
  void params(std::vector<P>& out) const {
    conv1.params(out);
    norm1.params(out);
    conv2.params(out);
    norm2.params(out);
  }
};

enum class HeadActivation { softmax, tanh };

template <class T>
class UNet {
 public:
  UNet() = default;
  UNet(const UNetConfig& cfg, HeadActivation act) : cfg_(cfg), act_(act) {
    cfg.validate();
    const auto& ch = cfg.encoder_channels;
    const std::size_t L = ch.size();
    std::size_t in = cfg.in_channels;
    for (std::size_t l = 0; l < L; ++l) {
      enc_.emplace_back((l + 1 == L ? std::string("bottleneck") : "enc" + std::to_string(l)), in, ch[l]);
      in = ch[l];
    }
    pools_.resize(L - 1);
    for (std::size_t l = 0; l + 1 < L; ++l) {
      up_.emplace_back("up" + std::to_string(l), ch[l + 1], ch[l]);
      dec_.emplace_back("dec" + std::to_string(l), 2 * ch[l], ch[l]);
    }
    head_ = Conv2d<T>("head", ch[0], cfg.out_channels, 1);
  }

  const UNetConfig& config() const { return cfg_; }
  HeadActivation activation() const { return act_; }
  Conv2d<T>& head() { return head_; }
  const Conv2d<T>& head() const { return head_; }

  void check_input(const Array<T>& x) const {
    require_nchw(x.shape(), "UNet");
    if (x.dim(1) != cfg_.in_channels)
      throw ShapeError("unet: expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                       std::to_string(x.dim(1)));
    const std::size_t d = cfg_.divisor();
    if (x.dim(2) % d != 0 || x.dim(3) % d != 0)
      throw ShapeError("unet: spatial size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                       " not divisible by " + std::to_string(d));
  }

  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    check_input(x);
    const std::size_t L = enc_.size();
    std::vector<Array<T>> skips(L - 1);
    Array<T> h = x;
    for (std::size_t l = 0; l + 1 < L; ++l) {
      skips[l] = enc_[l].forward(h, tape);
      h = pools_[l].forward(skips[l], tape);
    }
    h = enc_[L - 1].forward(h, tape);
    for (std::size_t l = L - 1; l-- > 0;) {
      h = dec_[l].forward(concat_channels(up_[l].forward(h, tape), skips[l]), tape);
    }
    Array<T> z = head_.forward(h, tape);
    return act_ == HeadActivation::softmax ? softmax_.forward(z, tape) : tanh_.forward(z, tape);
  }

  /// Accumulates parameter gradients and returns d(loss)/d(input).
  Array<T> backward(const Array<T>& dout, const Tape<T>& tape) {
    const std::size_t L = enc_.size();
    Array<T> dz = act_ == HeadActivation::softmax ? softmax_.backward(dout, tape) : tanh_.backward(dout, tape);
    Array<T> dh = head_.backward(dz, tape);
    std::vector<Array<T>> dskips(L - 1);
    for (std::size_t l = 0; l + 1 < L; ++l) {
      auto [du, ds] = split_channels(dec_[l].backward(dh, tape), up_[l].weight.value.dim(1));
      dskips[l] = std::move(ds);
      dh = up_[l].backward(du, tape);
    }
    dh = enc_[L - 1].backward(dh, tape);
    for (std::size_t l = L - 1; l-- > 0;) {
      dh = pools_[l].backward(dh, tape);
      add_inplace(dh, dskips[l]);
      dh = enc_[l].backward(dh, tape);
    }
    return dh;
  }

  /// Gradient of a loss w.r.t. the head's weight and bias, given d(loss)/d(output), without
  /// touching the accumulated gradients. Returned flattened as [weight..., bias...].
  std::vector<T> head_gradient(const Array<T>& dout, const Tape<T>& tape) const {
    const Array<T> dz = act_ == HeadActivation::softmax ? softmax_.backward(dout, tape) : tanh_.backward(dout, tape);
    const Array<T>& feat = tape.saved(&head_).at(0);
    const std::size_t N = feat.dim(0), C = feat.dim(1), M = feat.dim(2) * feat.dim(3), O = cfg_.out_channels;
    std::vector<T> g(O * C + O, T(0));
    for (std::size_t n = 0; n < N; ++n) {
      gemm<T>(false, true, O, C, M, dz.data() + n * O * M, feat.data() + n * C * M, g.data(), true);
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < M; ++i) g[O * C + o] += dz[(n * O + o) * M + i];
    }
    return g;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    collect(*this, out);
    return out;
  }
  std::vector<const Param<T>*> params() const {
    std::vector<const Param<T>*> out;
    collect(*this, out);
    return out;
  }

 private:
  template <class Self, class P>
  static void collect(Self& self, std::vector<P>& out) {
    const std::size_t L = self.enc_.size();
    for (std::size_t l = 0; l + 1 < L; ++l) self.enc_[l].params(out);
    self.enc_[L - 1].params(out);
    for (std::size_t l = L - 1; l-- > 0;) {
      self.up_[l].params(out);
      self.dec_[l].params(out);
    }
    self.head_.params(out);
  }

  UNetConfig cfg_;
  HeadActivation act_ = HeadActivation::softmax;
  std::vector<ConvBlock<T>> enc_;  // last entry is the bottleneck
  std::vector<MaxPool2x2<T>> pools_;
  std::vector<ConvTranspose2x2<T>> up_;
  std::vector<ConvBlock<T>> dec_;
  Conv2d<T> head_;
  ChannelSoftmax<T> softmax_;
  Tanh<T> tanh_;
};

template <class T>
class Discriminator {
 public:
  Discriminator() = default;
  explicit Discriminator(const DiscriminatorConfig& cfg)
      : cfg_(cfg),
        conv1_("disc.conv1", cfg.in_channels, cfg.base_channels, 3),
        conv2_("disc.conv2", cfg.base_channels, 2 * cfg.base_channels, cfg.downsample, cfg.downsample,
               cfg.downsample == 1 ? Padding::same : Padding::ceil),
        conv3_("disc.conv3", 2 * cfg.base_channels, 2 * cfg.base_channels, 3),
        conv4_("disc.conv4", 2 * cfg.base_channels, 1, 1),
        act1_(T(cfg.leaky_slope)), act2_(T(cfg.leaky_slope)), act3_(T(cfg.leaky_slope)) {
    cfg.validate();
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    require_nchw(x.shape(), "Discriminator");
    if (x.dim(1) != cfg_.in_channels) throw ShapeError("discriminator: input channel mismatch");
    if (x.dim(2) < cfg_.downsample || x.dim(3) < cfg_.downsample)
      throw ShapeError("discriminator: input smaller than one " + std::to_string(cfg_.downsample) + "x" +
                       std::to_string(cfg_.downsample) + " patch");
    Array<T> h = act1_.forward(conv1_.forward(x, tape), tape);
    h = act2_.forward(conv2_.forward(h, tape), tape);
    h = act3_.forward(conv3_.forward(h, tape), tape);
    return sigmoid_.forward(conv4_.forward(h, tape), tape);
  }

  Array<T> backward(const Array<T>& dout, const Tape<T>& tape) {
    Array<T> g = conv4_.backward(sigmoid_.backward(dout, tape), tape);
    g = conv3_.backward(act3_.backward(g, tape), tape);
    g = conv2_.backward(act2_.backward(g, tape), tape);
    return conv1_.backward(act1_.backward(g, tape), tape);
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    conv1_.params(out);
    conv2_.params(out);
    conv3_.params(out);
    conv4_.params(out);
    return out;
  }
  std::vector<const Param<T>*> params() const {
    std::vector<const Param<T>*> out;
    conv1_.params(out);
    conv2_.params(out);
    conv3_.params(out);
    conv4_.params(out);
    return out;
  }

 private:
  DiscriminatorConfig cfg_;
  Conv2d<T> conv1_, conv2_, conv3_, conv4_;
  LeakyReLU<T> act1_, act2_, act3_;
  Sigmoid<T> sigmoid_;
};

/// Xavier-uniform weights, zero biases, unit IN scales; consumes the RNG in parameter order.
template <class Net>
void xavier_init(Net& net, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xC0FFEE);
  for (auto* p : net.params()) {
    if (p->fan_in + p->fan_out > 0) xavier_uniform(*p, rng);
    p->zero_grad();
  }
}

template <class Net>
std::size_t parameter_count(const Net& net) {
  std::size_t n = 0;
  for (const auto* p : net.params()) n += p->value.size();
  return n;
}

/// FNV-1a over parameter names and bytes.
template <class Net>
std::uint64_t parameter_hash(const Net& net) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto* p : net.params()) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), p->value.size() * sizeof(typename std::remove_cvref_t<decltype(p->value)>::value_type));
  }
  return h;
}

template <class Net>
void zero_grad(Net& net) {
  for (auto* p : net.params()) p->zero_grad();
}

template <class Net>
void set_trainable(Net& net, bool trainable) {
  for (auto* p : net.params()) p->trainable = trainable;
}

}  // namespace nn

template <class T>
using Segmenter = nn::UNet<T>;
template <class T>
using Generator = nn::UNet<T>;
template <class T>
using Discriminator = nn::Discriminator<T>;

template <class T = float>
Segmenter<T> build_segmenter(const UNetConfig& cfg, std::uint64_t seed) {
  Segmenter<T> net(cfg, nn::HeadActivation::softmax);
  nn::xavier_init(net, seed);
  return net;
}

template <class T = float>
Generator<T> build_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Generator<T> net(cfg.as_unet(), nn::HeadActivation::tanh);
  nn::xavier_init(net, seed);
  return net;
}

template <class T = float>
Discriminator<T> build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  Discriminator<T> net(cfg);
  nn::xavier_init(net, seed);
  return net;
}

/// Per-pixel class probabilities [B,C,H,W]; H and W must be divisible by 2^(levels-1).
template <class T>
Array<T> seg_forward(const Segmenter<T>& net, const Array<T>& images, nn::Tape<T>* tape = nullptr) {
  return net.forward(images, tape);
}

struct PadRecord {
  std::size_t height = 0, width = 0;  // original spatial size
  std::size_t pad_bottom = 0, pad_right = 0;
};

/// Zero-pads [N,C,H,W] at the bottom/right up to a multiple of `multiple`.
template <class T>
std::pair<Array<T>, PadRecord> pad_to_multiple(const Array<T>& x, std::size_t multiple, T fill = T(0)) {
  nn::require_nchw(x.shape(), "pad_to_multiple");
  PadRecord rec{x.dim(2), x.dim(3), 0, 0};
  const std::size_t H = (x.dim(2) + multiple - 1) / multiple * multiple;
  const std::size_t W = (x.dim(3) + multiple - 1) / multiple * multiple;
  rec.pad_bottom = H - x.dim(2);
  rec.pad_right = W - x.dim(3);
  Array<T> y({x.dim(0), x.dim(1), H, W}, fill);
  for (std::size_t nc = 0; nc < x.dim(0) * x.dim(1); ++nc)
    for (std::size_t r = 0; r < rec.height; ++r)
      std::copy_n(x.data() + (nc * rec.height + r) * rec.width, rec.width, y.data() + (nc * H + r) * W);
  return {std::move(y), rec};
}

template <class T>
Array<T> crop_padding(const Array<T>& y, const PadRecord& rec) {
  const std::size_t H = y.dim(2), W = y.dim(3);
  Array<T> out({y.dim(0), y.dim(1), rec.height, rec.width});
  for (std::size_t nc = 0; nc < y.dim(0) * y.dim(1); ++nc)
    for (std::size_t r = 0; r < rec.height; ++r)
      std::copy_n(y.data() + (nc * H + r) * W, rec.width, out.data() + (nc * rec.height + r) * rec.width);
  return out;
}

/// seg_forward for arbitrary spatial sizes: pad, run, crop back.
template <class T>
Array<T> seg_forward_padded(const Segmenter<T>& net, const Array<T>& images) {
  auto [padded, rec] = pad_to_multiple(images, net.config().divisor());
  return crop_padding(net.forward(padded, nullptr), rec);
}

template <class T>
void require_unit_range(const Array<T>& x, const char* who) {
  for (auto v : x)
    if (!(v >= T(-1) - T(1e-6) && v <= T(1) + T(1e-6)))
      throw NormalizationError(std::string(who) + ": input must be normalized to [-1,1]");
}

/// Reconstruction in (-1,1), same shape as the occluded input.
template <class T>
Array<T> gen_forward(const Generator<T>& net, const Array<T>& occluded, nn::Tape<T>* tape = nullptr) {
  require_unit_range(occluded, "generator");
  return net.forward(occluded, tape);
}

/// Patch probability map [B,1,ceil(H/5),ceil(W/5)] in (0,1).
template <class T>
Array<T> disc_forward(const Discriminator<T>& net, const Array<T>& images, nn::Tape<T>* tape = nullptr) {
  require_unit_range(images, "discriminator");
  return net.forward(images, tape);
}

}  // namespace brainseg
