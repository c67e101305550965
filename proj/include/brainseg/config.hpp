#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "brainseg/dataset.hpp"
#include "brainseg/enhancement.hpp"
#include "brainseg/losses.hpp"
#include "brainseg/metrics.hpp"
#include "brainseg/nets.hpp"
#include "brainseg/optim.hpp"
#include "brainseg/phantom.hpp"
#include "brainseg/training.hpp"

namespace brainseg {

/// Everything a run needs. Defaults are the desk-scale profile: 64x64 phantoms, batch 16 and
/// narrow networks; full-size widths and batch 80 are plain overrides.
struct RunConfig {
  std::uint64_t seed = 7;

  PhantomSpec phantom;
  std::size_t tumor_subjects = 200;
  std::size_t normal_subjects = 100;
  bool normals_t1_only = false;

  EnhanceParams enhance;
  DataConfig data;

  UNetConfig segmenter{4, {16, 32, 64, 80}, 4};
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  OptimizerConfig optimizer;
  PretrainConfig pretrain;
  LossConstants loss;
  SweepConfig sweep;
  EvalOptions eval;

  void validate() const;
};

namespace detail {

template <class N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ConfigError("config: '" + key + "' expects a number, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + text + "'");
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

}  // namespace detail

/// One configurable key: how to print it and how to assign it from text.
struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

/// The schema of RunConfig, bound to one instance. Order is the order of the printed file.
inline std::vector<ConfigKey> config_keys(RunConfig& c) {
  using detail::format_double;
  std::vector<ConfigKey> k;
  auto num = [&k](std::string name, std::string help, auto& ref) {
    using N = std::remove_reference_t<decltype(ref)>;
    k.push_back({name, std::move(help),
                 [&ref] {
                   if constexpr (std::is_floating_point_v<N>) return format_double(ref);
                   else return std::to_string(ref);
                 },
                 [&ref, name](const std::string& v) { ref = detail::parse_number<N>(name, v); }});
  };
  auto flag = [&k](std::string name, std::string help, bool& ref) {
    k.push_back({name, std::move(help), [&ref] { return std::string(ref ? "true" : "false"); },
                 [&ref, name](const std::string& v) { ref = detail::parse_bool(name, v); }});
  };
  auto sizes = [&k](std::string name, std::string help, std::vector<std::size_t>& ref) {
    k.push_back({name, std::move(help),
                 [&ref] {
                   std::string s;
                   for (std::size_t i = 0; i < ref.size(); ++i) s += (i ? "," : "") + std::to_string(ref[i]);
                   return s;
                 },
                 [&ref, name](const std::string& v) {
                   ref.clear();
                   for (const auto& item : detail::split_list(v)) ref.push_back(detail::parse_number<std::size_t>(name, item));
                 }});
  };
  auto reals = [&k](std::string name, std::string help, std::vector<double>& ref) {
    k.push_back({name, std::move(help),
                 [&ref] {
                   std::string s;
                   for (std::size_t i = 0; i < ref.size(); ++i) s += (i ? "," : "") + format_double(ref[i]);
                   return s;
                 },
                 [&ref, name](const std::string& v) {
                   ref.clear();
                   for (const auto& item : detail::split_list(v)) ref.push_back(detail::parse_number<double>(name, item));
                 }});
  };

  num("seed", "master seed; every stage derives its streams from it", c.seed);

  num("phantom.image_size", "phantom side length in pixels", c.phantom.image_size);
  num("phantom.slices", "slices per phantom volume (1 = 2D)", c.phantom.n_slices);
  num("phantom.tumor_subjects", "tumor-bearing phantoms written by synth", c.tumor_subjects);
  num("phantom.normal_subjects", "tumor-free phantoms written by synth", c.normal_subjects);
  num("phantom.tumor_count_min", "lesions per tumor phantom, lower bound", c.phantom.tumor_count_min);
  num("phantom.tumor_count_max", "lesions per tumor phantom, upper bound", c.phantom.tumor_count_max);
  num("phantom.tumor_radius_min", "lesion radius lower bound (pixels)", c.phantom.tumor_radius_min);
  num("phantom.tumor_radius_max", "lesion radius upper bound (pixels)", c.phantom.tumor_radius_max);
  num("phantom.noise_sigma", "additive noise, fraction of tissue intensity", c.phantom.noise_sigma);
  flag("phantom.normals_t1_only", "normal phantoms carry T1 replicated into all four channels", c.normals_t1_only);

  num("enhance.lambda", "exponent of the contrast-compression stage", c.enhance.lambda);
  num("enhance.epsilon_guard", "guard added to denominators", c.enhance.epsilon_guard);
  flag("enhance.prescale_to_unit", "divide each slice by its maximum first", c.enhance.prescale_to_unit);

  flag("data.enhance", "apply the enhancement before tanh scaling", c.data.enhance);
  num("data.canvas", "network input side (pad/crop target)", c.data.canvas);
  num("data.val_fraction", "validation share of training subjects", c.data.val_fraction);
  num("data.test_fraction", "held-out test share of tumor subjects", c.data.test_fraction);

  sizes("segmenter.encoder_channels", "U-Net stage widths, last = bottleneck", c.segmenter.encoder_channels);
  sizes("generator.encoder_channels", "inpainting U-Net stage widths", c.generator.encoder_channels);
  num("discriminator.base_channels", "width of the first discriminator conv", c.discriminator.base_channels);
  num("discriminator.downsample", "total downsampling of the patch map", c.discriminator.downsample);
  num("discriminator.leaky_slope", "negative slope of the leaky rectifiers", c.discriminator.leaky_slope);

  num("optimizer.alpha0", "initial learning rate", c.optimizer.alpha0);
  num("optimizer.beta1", "Adam first-moment decay", c.optimizer.beta1);
  num("optimizer.beta2", "Adam second-moment decay", c.optimizer.beta2);
  num("optimizer.adam_eps", "Adam denominator guard", c.optimizer.adam_eps);
  num("optimizer.weight_decay", "L2 penalty folded into the gradient", c.optimizer.weight_decay);
  num("optimizer.batch_size", "slices per step", c.optimizer.batch_size);
  num("optimizer.epochs", "segmenter training epochs", c.optimizer.epochs);
  num("optimizer.lr_power", "polynomial decay power", c.optimizer.lr_power);

  num("pretrain.epochs", "GAN pretraining epochs (upper bound with early stopping)", c.pretrain.epochs);
  num("pretrain.occlusion_min", "smallest occluded share of the brain box", c.pretrain.occlusion_min);
  num("pretrain.occlusion_max", "largest occluded share of the brain box", c.pretrain.occlusion_max);
  num("pretrain.d_update_period", "generator updates per discriminator update", c.pretrain.d_update_period);
  num("pretrain.early_stop_patience", "epochs without validation improvement before stopping", c.pretrain.early_stop_patience);
  num("pretrain.recon_weight", "weight of the L1 inpainting term", c.pretrain.recon_weight);

  num("loss.alpha", "sparsity coefficient", c.loss.alpha);
  num("loss.gamma", "size coefficient", c.loss.gamma);
  num("loss.eps", "dynamic weight guard", c.loss.eps);
  num("loss.dice_smooth", "Dice smoothing term", c.loss.dice_smooth);
  num("loss.ema_momentum", "smoothing of per-term gradient norms", c.loss.ema_momentum);
  num("loss.phase1_last_epoch", "last epoch of segmentation-only training", c.loss.phase1_last_epoch);
  flag("loss.dynamic_seg_weight", "balance the segmentation term too (false: fixed at 1)", c.loss.dynamic_seg_weight);
  flag("loss.edge_gradient", "backpropagate through the edge attention", c.loss.edge_gradient);

  reals("sweep.thresholds", "strictly increasing thresholds in (0,1)", c.sweep.thresholds);
  k.push_back({"sweep.orientation", "normality (flag when 1-score < t) or abnormality (flag when score >= t)",
               [&c] { return std::string(c.sweep.orientation == SweepOrientation::normality ? "normality" : "abnormality"); },
               [&c](const std::string& v) {
                 if (v == "normality") c.sweep.orientation = SweepOrientation::normality;
                 else if (v == "abnormality") c.sweep.orientation = SweepOrientation::abnormality;
                 else throw ConfigError("config: sweep.orientation must be normality or abnormality");
               }});
  flag("sweep.gated", "gate the patch map with the segmenter's edge attention", c.sweep.gated);

  k.push_back({"eval.connectivity", "lesion connectivity in 3D: 6, 18 or 26",
               [&c] { return std::to_string(int(c.eval.connectivity)); },
               [&c](const std::string& v) {
                 const int n = detail::parse_number<int>("eval.connectivity", v);
                 if (n != 6 && n != 18 && n != 26) throw ConfigError("config: eval.connectivity must be 6, 18 or 26");
                 c.eval.connectivity = Connectivity(n);
               }});
  num("eval.percentile", "Hausdorff percentile for HD95", c.eval.percentile);
  return k;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (auto& k : config_keys(c))
    if (k.name == key) {
      k.set(detail::trim(value));
      return;
    }
  throw ConfigError("config: unknown key '" + key + "'");
}

/// "key = value" lines, '#' comments; later lines win.
inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    set_config_value(c, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

inline void apply_config_file(RunConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(c, ss.str());
}

/// Fully resolved configuration; parses back to the same values.
inline std::string config_text(const RunConfig& cfg, bool with_help = true) {
  RunConfig c = cfg;
  std::string out;
  std::string section;
  for (const auto& k : config_keys(c)) {
    const auto dot = k.name.find('.');
    const std::string sec = dot == std::string::npos ? "" : k.name.substr(0, dot);
    if (sec != section && !out.empty()) out += "\n";
    section = sec;
    if (with_help) out += "# " + k.help + "\n";
    out += k.name + " = " + k.get() + "\n";
  }
  return out;
}

inline void RunConfig::validate() const {
  PhantomSpec p = phantom;
  p.validate();
  if (tumor_subjects + normal_subjects == 0) throw ValidationError("synth needs at least one subject");
  enhance.validate();
  data.validate();
  segmenter.validate();
  if (segmenter.in_channels != kModalities || segmenter.out_channels != kClassLabels.size())
    throw ValidationError("segmenter must map 4 modalities to 4 classes");
  if (data.canvas % segmenter.divisor() != 0)
    throw ValidationError("data.canvas must be divisible by 2^(segmenter depth - 1)");
  generator.validate();
  if (data.canvas % generator.as_unet().divisor() != 0)
    throw ValidationError("data.canvas must be divisible by 2^(generator depth - 1)");
  discriminator.validate();
  optimizer.validate();
  pretrain.validate();
  loss.validate();
  sweep.validate();
  if (!(eval.percentile > 0.0 && eval.percentile <= 100.0)) throw ValidationError("eval.percentile must be in (0,100]");
}

}  // namespace brainseg
