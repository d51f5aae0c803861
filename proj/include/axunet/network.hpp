#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "axunet/graph.hpp"
#include "axunet/layers.hpp"
#include "axunet/tensor.hpp"

namespace axunet {

enum class NormKind { batch, group };

const char* norm_kind_name(NormKind k);

// The five model variants with their training batch sizes.
struct ModelPreset {
  std::string name;
  int batch_size;
  NormKind norm;
  int encoder_scale;  // filter multiplier applied to the encoder only
  bool attention;
};

const std::vector<ModelPreset>& model_presets();
// Accepts the roster names case-insensitively, with '-' or '+' separators.
const ModelPreset& preset_by_name(const std::string& name);

struct NetworkConfig {
  std::string preset = "BL";
  int levels = 4;
  std::array<std::int64_t, 3> patch{32, 32, 32};
  int in_channels = 4;
  int out_regions = 3;
  int channel_start = 8;        // filters at the highest resolution (baseline)
  int channel_cap = 64;         // baseline / decoder cap
  int encoder_channel_cap = 64; // raised cap for the widened encoder
  NormKind norm = NormKind::group;
  int norm_groups = 32;  // effective per site: min(norm_groups, channels)
  int encoder_scale = 1;
  bool attention = false;
  int attention_skip_top = 1;  // attention everywhere except the top K resolutions
  int attention_heads_start = 2;
  int attention_head_dim_start = 4;
  double leaky_slope = 0.01;
  double norm_eps = 1e-5;
  double bn_momentum = 0.1;

  std::string canonical() const;
  std::uint64_t digest() const;
  static NetworkConfig from_canonical(const std::string& text);
};

// Small configuration usable on one CPU; structural rules match the full-scale
// configuration below.
NetworkConfig desk_config(const ModelPreset& preset);
// Full-scale constants: 128^3 patches, 5 levels, filters 32..320 (512 cap for
// the widened encoder), 32 norm groups, attention heads starting at 4/16.
NetworkConfig paper_config(const ModelPreset& preset);

enum class ParamInit { fan_in_uniform, zeros, ones };

struct ParamInfo {
  std::string name;
  Shape shape;
  bool trainable = true;
  ParamInit init = ParamInit::zeros;
  std::int64_t fan_in = 0;
};

// Declarative network description; building it allocates nothing.
struct NetworkPlan {
  NetworkConfig cfg;
  std::vector<int> encoder_channels;  // per level
  std::vector<int> decoder_channels;  // per decoder level (0 = full resolution)
  std::vector<int> supervised_levels; // decoder levels with output heads, ascending
  struct AttentionSite {
    int level;  // network level (levels-1 = bottleneck)
    int heads;
    int head_dim;
    int channels;
  };
  std::vector<AttentionSite> attention_sites;  // ascending by level
  std::vector<ParamInfo> params;

  std::int64_t parameter_count() const;  // trainable scalars
  const AttentionSite* attention_at(int level) const;
  int norm_groups_for(int channels) const;
};

NetworkPlan plan_network(const NetworkConfig& cfg);

template <class T>
class Network {
 public:
  enum class Mode { train, infer };

  struct Bindings {
    std::map<std::string, Val> overrides;   // supplied leaves replace store params
    std::map<std::string, Val> registered;  // every parameter Val used by the pass
  };

  static Network build(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkPlan& plan() const { return plan_; }
  const NetworkConfig& config() const { return plan_.cfg; }

  std::vector<std::string> param_names() const;
  bool has_param(const std::string& name) const;
  Tensor<T>& param(const std::string& name);
  const Tensor<T>& param(const std::string& name) const;
  std::int64_t parameter_count() const { return plan_.parameter_count(); }

  // Runs the network on [batch, 4, patch...]. Train mode returns logits at
  // every supervised resolution (highest first); infer mode returns only the
  // full-resolution logits.
  std::vector<Val> forward(Graph<T>& g, Val input, Mode mode, Bindings* bindings = nullptr);

  void save_checkpoint(const std::string& path) const;
  static Network load_checkpoint(const std::string& path);

 private:
  NetworkPlan plan_;
  std::vector<std::pair<std::string, Tensor<T>>> store_;
  std::unordered_map<std::string, std::size_t> index_;
};

using NetworkF = Network<float>;
using NetworkD = Network<double>;

}  // namespace axunet
