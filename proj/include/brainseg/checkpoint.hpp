#pragma once

#include <filesystem>
#include <string>

#include "brainseg/container.hpp"
#include "brainseg/nets.hpp"

namespace brainseg {

inline constexpr int kCheckpointVersion = 1;

// Checkpoints are raw containers of kind "checkpoint": one float32 array per parameter,
// meta = {"network": "segmenter"|"generator"|"discriminator", "version", "config", "state"}.

template <class Net>
Container checkpoint_container(const Net& net, const std::string& network, const Json& config, const Json& state) {
  Container c;
  c.kind = "checkpoint";
  c.meta = {{"network", network}, {"version", kCheckpointVersion}, {"config", config}, {"state", state}};
  for (const auto* p : net.params()) c.arrays.push_back({p->name, p->value.template cast<float>()});
  return c;
}

template <class Net>
void save_checkpoint(const std::filesystem::path& path, const Net& net, const std::string& network,
                     const Json& config, const Json& state = Json::object()) {
  write_container(path, checkpoint_container(net, network, config, state));
}

/// Copies stored arrays into `net` by parameter name; every parameter must be present with the
/// same shape.
template <class Net>
void restore_parameters(Net& net, const Container& c) {
  for (auto* p : net.params()) {
    if (!c.has(p->name)) throw IngestionError("checkpoint lacks parameter '" + p->name + "'");
    const Array<float>& a = c.get(p->name);
    if (a.shape() != p->value.shape())
      throw ShapeError("checkpoint parameter '" + p->name + "' has shape " + shape_str(a.shape()) + ", network expects " +
                       shape_str(p->value.shape()));
    using V = typename std::remove_cvref_t<decltype(p->value)>::value_type;
    p->value = a.template cast<V>();
  }
}

inline Container read_checkpoint(const std::filesystem::path& path, const std::string& network) {
  Container c = read_container(path);
  if (c.kind != "checkpoint") throw IngestionError(path.string() + ": not a checkpoint (kind '" + c.kind + "')");
  if (c.meta.value("network", std::string()) != network)
    throw IngestionError(path.string() + ": holds a " + c.meta.value("network", std::string("?")) + ", expected " + network);
  if (c.meta.value("version", 0) != kCheckpointVersion)
    throw IngestionError(path.string() + ": unsupported checkpoint version");
  return c;
}

template <class T = float>
Segmenter<T> load_segmenter(const std::filesystem::path& path) {
  const Container c = read_checkpoint(path, "segmenter");
  Segmenter<T> net(c.meta.at("config").get<UNetConfig>(), nn::HeadActivation::softmax);
  restore_parameters(net, c);
  return net;
}

template <class T = float>
Generator<T> load_generator(const std::filesystem::path& path) {
  const Container c = read_checkpoint(path, "generator");
  const auto cfg = c.meta.at("config").get<GeneratorConfig>();
  cfg.validate();
  Generator<T> net(cfg.as_unet(), nn::HeadActivation::tanh);
  restore_parameters(net, c);
  return net;
}

template <class T = float>
Discriminator<T> load_discriminator(const std::filesystem::path& path) {
  const Container c = read_checkpoint(path, "discriminator");
  Discriminator<T> net(c.meta.at("config").get<DiscriminatorConfig>());
  restore_parameters(net, c);
  return net;
}

}  // namespace brainseg
