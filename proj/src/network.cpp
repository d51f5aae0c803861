#include "axunet/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "axunet/attention.hpp"
#include "axunet/rng.hpp"

namespace axunet {

const char* norm_kind_name(NormKind k) { return k == NormKind::batch ? "batch" : "group"; }

const std::vector<ModelPreset>& model_presets() {
  static const std::vector<ModelPreset> presets = {
      {"BL", 5, NormKind::batch, 1, false},
      {"BL+L", 2, NormKind::batch, 2, false},
      {"BL+GN", 2, NormKind::group, 1, false},
      {"BL+AA", 2, NormKind::batch, 1, true},
      {"BL+L+GN", 2, NormKind::group, 2, false},
  };
  return presets;
}

const ModelPreset& preset_by_name(const std::string& name) {
  std::string norm;
  for (char c : name) {
    if (c == '-') c = '+';
    norm.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  for (const auto& p : model_presets())
    if (p.name == norm) return p;
  std::string known;
  for (const auto& p : model_presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw std::invalid_argument("unknown model preset '" + name + "' (known: " + known + ")");
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string NetworkConfig::canonical() const {
  std::ostringstream os;
  os << "axunet-net-v1"
     << ";preset=" << preset << ";levels=" << levels << ";patch=" << patch[0] << ',' << patch[1]
     << ',' << patch[2] << ";in=" << in_channels << ";out=" << out_regions
     << ";start=" << channel_start << ";cap=" << channel_cap << ";enc_cap=" << encoder_channel_cap
     << ";norm=" << norm_kind_name(norm) << ";groups=" << norm_groups
     << ";enc_scale=" << encoder_scale << ";attn=" << (attention ? 1 : 0)
     << ";attn_skip=" << attention_skip_top << ";attn_heads=" << attention_heads_start
     << ";attn_dim=" << attention_head_dim_start << ";slope=" << fmt_double(leaky_slope)
     << ";eps=" << fmt_double(norm_eps) << ";bn_mom=" << fmt_double(bn_momentum);
  return os.str();
}

std::uint64_t NetworkConfig::digest() const { return fnv1a64(canonical()); }

NetworkConfig NetworkConfig::from_canonical(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ';') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  if (parts.empty() || parts[0] != "axunet-net-v1")
    throw std::runtime_error("unrecognized network config header: '" +
                             (parts.empty() ? std::string() : parts[0]) + "'");
  NetworkConfig cfg;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("malformed network config entry '" + parts[i] + "'");
    const std::string key = parts[i].substr(0, eq);
    const std::string val = parts[i].substr(eq + 1);
    if (key == "preset") cfg.preset = val;
    else if (key == "levels") cfg.levels = std::stoi(val);
    else if (key == "patch") {
      if (std::sscanf(val.c_str(), "%ld,%ld,%ld", &cfg.patch[0], &cfg.patch[1], &cfg.patch[2]) !=
          3)
        throw std::runtime_error("malformed patch entry '" + val + "'");
    } else if (key == "in") cfg.in_channels = std::stoi(val);
    else if (key == "out") cfg.out_regions = std::stoi(val);
    else if (key == "start") cfg.channel_start = std::stoi(val);
    else if (key == "cap") cfg.channel_cap = std::stoi(val);
    else if (key == "enc_cap") cfg.encoder_channel_cap = std::stoi(val);
    else if (key == "norm") cfg.norm = (val == "batch" ? NormKind::batch : NormKind::group);
    else if (key == "groups") cfg.norm_groups = std::stoi(val);
    else if (key == "enc_scale") cfg.encoder_scale = std::stoi(val);
    else if (key == "attn") cfg.attention = (val == "1");
    else if (key == "attn_skip") cfg.attention_skip_top = std::stoi(val);
    else if (key == "attn_heads") cfg.attention_heads_start = std::stoi(val);
    else if (key == "attn_dim") cfg.attention_head_dim_start = std::stoi(val);
    else if (key == "slope") cfg.leaky_slope = std::stod(val);
    else if (key == "eps") cfg.norm_eps = std::stod(val);
    else if (key == "bn_mom") cfg.bn_momentum = std::stod(val);
    else throw std::runtime_error("unknown network config key '" + key + "'");
  }
  return cfg;
}

NetworkConfig desk_config(const ModelPreset& preset) {
  NetworkConfig cfg;
  cfg.preset = preset.name;
  cfg.levels = 4;
  cfg.patch = {32, 32, 32};
  cfg.channel_start = 8;
  cfg.channel_cap = 64;
  cfg.encoder_channel_cap = 64;
  cfg.norm = preset.norm;
  cfg.encoder_scale = preset.encoder_scale;
  cfg.attention = preset.attention;
  cfg.attention_heads_start = 2;
  cfg.attention_head_dim_start = 4;
  return cfg;
}

NetworkConfig paper_config(const ModelPreset& preset) {
  NetworkConfig cfg;
  cfg.preset = preset.name;
  cfg.levels = 5;
  cfg.patch = {128, 128, 128};
  cfg.channel_start = 32;
  cfg.channel_cap = 320;
  cfg.encoder_channel_cap = preset.encoder_scale > 1 ? 512 : 320;
  cfg.norm = preset.norm;
  cfg.encoder_scale = preset.encoder_scale;
  cfg.attention = preset.attention;
  cfg.attention_heads_start = 4;
  cfg.attention_head_dim_start = 16;
  return cfg;
}

std::int64_t NetworkPlan::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params)
    if (p.trainable) n += shape_numel(p.shape);
  return n;
}

const NetworkPlan::AttentionSite* NetworkPlan::attention_at(int level) const {
  for (const auto& s : attention_sites)
    if (s.level == level) return &s;
  return nullptr;
}

int NetworkPlan::norm_groups_for(int channels) const {
  return std::min(cfg.norm_groups, channels);
}

namespace {

struct PlanBuilder {
  NetworkPlan plan;

  void add(std::string name, Shape shape, bool trainable, ParamInit init, std::int64_t fan_in) {
    plan.params.push_back(ParamInfo{std::move(name), std::move(shape), trainable, init, fan_in});
  }

  void add_conv(const std::string& prefix, std::int64_t co, std::int64_t ci, std::int64_t k) {
    add(prefix + ".w", Shape{co, ci, k, k, k}, true, ParamInit::fan_in_uniform, ci * k * k * k);
    add(prefix + ".b", Shape{co}, true, ParamInit::zeros, 0);
  }

  void add_norm(const std::string& prefix, std::int64_t channels) {
    add(prefix + ".gamma", Shape{channels}, true, ParamInit::ones, 0);
    add(prefix + ".beta", Shape{channels}, true, ParamInit::zeros, 0);
    if (plan.cfg.norm == NormKind::batch) {
      add(prefix + ".running_mean", Shape{channels}, false, ParamInit::zeros, 0);
      add(prefix + ".running_var", Shape{channels}, false, ParamInit::ones, 0);
      add(prefix + ".steps", Shape{1}, false, ParamInit::zeros, 0);
    }
  }

  void add_attention_site(int level, std::int64_t channels, int heads, int head_dim) {
    const std::int64_t dm = static_cast<std::int64_t>(heads) * head_dim;
    static const char* axes[3] = {"x", "y", "z"};
    for (const char* ax : axes) {
      const std::string p = "attn" + std::to_string(level) + "." + ax;
      add(p + ".wq", Shape{channels, dm}, true, ParamInit::fan_in_uniform, channels);
      add(p + ".wk", Shape{channels, dm}, true, ParamInit::fan_in_uniform, channels);
      add(p + ".wv", Shape{channels, dm}, true, ParamInit::fan_in_uniform, channels);
      add(p + ".wo", Shape{dm, channels}, true, ParamInit::fan_in_uniform, dm);
    }
    plan.attention_sites.push_back(NetworkPlan::AttentionSite{
        level, heads, head_dim, static_cast<int>(channels)});
  }
};

}  // namespace

NetworkPlan plan_network(const NetworkConfig& cfg) {
  if (cfg.levels < 3)
    throw std::invalid_argument("network needs at least 3 levels, got " +
                                std::to_string(cfg.levels));
  if (cfg.in_channels != 4)
    throw std::invalid_argument("input must have the 4 contrast channels");
  if (cfg.out_regions != 3)
    throw std::invalid_argument("output must have the 3 region channels");
  if (cfg.encoder_scale < 1 || cfg.channel_start < 1 || cfg.channel_cap < cfg.channel_start)
    throw std::invalid_argument("invalid channel configuration");
  const std::int64_t div = std::int64_t(1) << (cfg.levels - 1);
  for (auto p : cfg.patch)
    if (p % div != 0)
      throw std::invalid_argument("patch size [" + std::to_string(cfg.patch[0]) + ", " +
                                  std::to_string(cfg.patch[1]) + ", " +
                                  std::to_string(cfg.patch[2]) + "] not divisible by 2^(levels-1)=" +
                                  std::to_string(div));

  PlanBuilder pb;
  pb.plan.cfg = cfg;
  NetworkPlan& plan = pb.plan;

  for (int l = 0; l < cfg.levels; ++l) {
    const std::int64_t c = std::min<std::int64_t>(
        static_cast<std::int64_t>(cfg.channel_start) * cfg.encoder_scale * (std::int64_t(1) << l),
        cfg.encoder_channel_cap);
    plan.encoder_channels.push_back(static_cast<int>(c));
  }
  for (int l = 0; l < cfg.levels - 1; ++l) {
    const std::int64_t c = std::min<std::int64_t>(
        static_cast<std::int64_t>(cfg.channel_start) * (std::int64_t(1) << l), cfg.channel_cap);
    plan.decoder_channels.push_back(static_cast<int>(c));
  }
  for (int l = 0; l + 2 < cfg.levels; ++l) plan.supervised_levels.push_back(l);

  const auto check_groups = [&](std::int64_t channels) {
    if (cfg.norm != NormKind::group) return;
    const int g = plan.norm_groups_for(static_cast<int>(channels));
    if (channels % g != 0)
      throw std::invalid_argument("group_norm channels " + std::to_string(channels) +
                                  " not divisible by effective group count " + std::to_string(g));
  };

  // Encoder: two same-resolution blocks per level, strided down transition.
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string el = "enc" + std::to_string(l);
    const std::int64_t c = plan.encoder_channels[static_cast<std::size_t>(l)];
    check_groups(c);
    if (l > 0) {
      const std::int64_t cp = plan.encoder_channels[static_cast<std::size_t>(l - 1)];
      pb.add_conv(el + ".down", c, cp, 2);
      pb.add_norm(el + ".down_norm", c);
    }
    pb.add_conv(el + ".conv0", c, l == 0 ? cfg.in_channels : c, 3);
    pb.add_norm(el + ".norm0", c);
    pb.add_conv(el + ".conv1", c, c, 3);
    pb.add_norm(el + ".norm1", c);
  }

  // Attention sites: every resolution except the top attention_skip_top.
  if (cfg.attention) {
    for (int lv = std::max(cfg.attention_skip_top, 0); lv < cfg.levels; ++lv) {
      const int mult = 1 << (lv - cfg.attention_skip_top);
      const std::int64_t channels =
          lv == cfg.levels - 1 ? plan.encoder_channels[static_cast<std::size_t>(lv)]
                               : plan.decoder_channels[static_cast<std::size_t>(lv)];
      pb.add_attention_site(lv, channels, cfg.attention_heads_start * mult,
                            cfg.attention_head_dim_start * mult);
    }
  }

  // Decoder: transpose-conv upsampling, skip concatenation, two blocks.
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const std::string dl = "dec" + std::to_string(l);
    const std::int64_t dc = plan.decoder_channels[static_cast<std::size_t>(l)];
    const std::int64_t src = l + 1 == cfg.levels - 1
                                 ? plan.encoder_channels[static_cast<std::size_t>(l + 1)]
                                 : plan.decoder_channels[static_cast<std::size_t>(l + 1)];
    check_groups(dc);
    pb.add(dl + ".up.w", Shape{src, dc, 2, 2, 2}, true, ParamInit::fan_in_uniform, src * 8);
    pb.add(dl + ".up.b", Shape{dc}, true, ParamInit::zeros, 0);
    const std::int64_t skip = plan.encoder_channels[static_cast<std::size_t>(l)];
    pb.add_conv(dl + ".conv0", dc, dc + skip, 3);
    pb.add_norm(dl + ".norm0", dc);
    pb.add_conv(dl + ".conv1", dc, dc, 3);
    pb.add_norm(dl + ".norm1", dc);
  }

  for (int l : plan.supervised_levels) {
    const std::int64_t dc = plan.decoder_channels[static_cast<std::size_t>(l)];
    pb.add_conv("head" + std::to_string(l), cfg.out_regions, dc, 1);
  }

  return plan;
}

// ---- Network ----

template <class T>
Network<T> Network<T>::build(const NetworkConfig& cfg, std::uint64_t seed) {
  Network<T> net;
  net.plan_ = plan_network(cfg);
  const Rng master(seed);
  for (const auto& info : net.plan_.params) {
    Tensor<T> t(info.shape);
    switch (info.init) {
      case ParamInit::zeros:
        break;
      case ParamInit::ones:
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = T(1);
        break;
      case ParamInit::fan_in_uniform: {
        Rng rng = master.derive(fnv1a64(info.name));
        const double bound = 1.0 / std::sqrt(static_cast<double>(info.fan_in));
        for (std::int64_t i = 0; i < t.size(); ++i)
          t[i] = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
    }
    net.index_[info.name] = net.store_.size();
    net.store_.emplace_back(info.name, std::move(t));
  }
  return net;
}

template <class T>
std::vector<std::string> Network<T>::param_names() const {
  std::vector<std::string> names;
  names.reserve(store_.size());
  for (const auto& [name, _] : store_) names.push_back(name);
  return names;
}

template <class T>
bool Network<T>::has_param(const std::string& name) const {
  return index_.count(name) != 0;
}

template <class T>
Tensor<T>& Network<T>::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
  return store_[it->second].second;
}

template <class T>
const Tensor<T>& Network<T>::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
  return store_[it->second].second;
}

template <class T>
std::vector<Val> Network<T>::forward(Graph<T>& g, Val input, Mode mode, Bindings* bindings) {
  const NetworkConfig& cfg = plan_.cfg;
  const Shape& is = g.value(input).shape();
  if (is.size() != 5 || is[1] != cfg.in_channels || is[2] != cfg.patch[0] ||
      is[3] != cfg.patch[1] || is[4] != cfg.patch[2])
    throw std::invalid_argument(
        "network input shape " + shape_str(is) + " does not match [batch, " +
        std::to_string(cfg.in_channels) + ", " + std::to_string(cfg.patch[0]) + ", " +
        std::to_string(cfg.patch[1]) + ", " + std::to_string(cfg.patch[2]) + "]");

  const bool train = mode == Mode::train;
  auto P = [&](const std::string& name) -> Val {
    if (bindings) {
      auto it = bindings->overrides.find(name);
      if (it != bindings->overrides.end()) {
        bindings->registered[name] = it->second;
        return it->second;
      }
    }
    Val v = g.leaf(param(name), train);
    if (bindings) bindings->registered[name] = v;
    return v;
  };

  auto norm_block = [&](Val h, const std::string& prefix, std::int64_t channels) -> Val {
    Val gamma = P(prefix + ".gamma");
    Val beta = P(prefix + ".beta");
    if (cfg.norm == NormKind::group)
      return group_norm(g, h, gamma, beta, plan_.norm_groups_for(static_cast<int>(channels)),
                        cfg.norm_eps);
    BatchNormState<T> st{param(prefix + ".running_mean"), param(prefix + ".running_var"),
                         param(prefix + ".steps")};
    return batch_norm(g, h, gamma, beta, st, train, cfg.bn_momentum, cfg.norm_eps);
  };

  auto conv_block = [&](Val h, const std::string& conv, const std::string& norm,
                        std::int64_t channels, const ConvGeom& geom) -> Val {
    h = conv3d(g, h, P(conv + ".w"), P(conv + ".b"), geom);
    h = norm_block(h, norm, channels);
    return g.leaky_relu(h, cfg.leaky_slope);
  };

  auto attention_block = [&](Val h, const NetworkPlan::AttentionSite& site) -> Val {
    std::array<AxisAttentionVals, 3> w;
    static const char* axes[3] = {"x", "y", "z"};
    for (int a = 0; a < 3; ++a) {
      const std::string p = "attn" + std::to_string(site.level) + "." + axes[a];
      w[static_cast<std::size_t>(a)] =
          AxisAttentionVals{P(p + ".wq"), P(p + ".wk"), P(p + ".wv"), P(p + ".wo")};
    }
    return axial_decoder_block(g, h, w, site.heads, site.head_dim);
  };

  std::vector<Val> skips(static_cast<std::size_t>(cfg.levels - 1));
  Val h = input;
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string el = "enc" + std::to_string(l);
    const std::int64_t c = plan_.encoder_channels[static_cast<std::size_t>(l)];
    if (l > 0) h = conv_block(h, el + ".down", el + ".down_norm", c, conv_down2());
    h = conv_block(h, el + ".conv0", el + ".norm0", c, conv_same3());
    h = conv_block(h, el + ".conv1", el + ".norm1", c, conv_same3());
    if (l < cfg.levels - 1) skips[static_cast<std::size_t>(l)] = h;
  }

  if (const auto* site = plan_.attention_at(cfg.levels - 1)) h = attention_block(h, *site);

  std::map<int, Val> heads;
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const std::string dl = "dec" + std::to_string(l);
    const std::int64_t dc = plan_.decoder_channels[static_cast<std::size_t>(l)];
    Val u = transpose_conv3d(g, h, P(dl + ".up.w"), P(dl + ".up.b"), conv_down2());
    if (const auto* site = plan_.attention_at(l)) u = attention_block(u, *site);
    h = g.concat(u, skips[static_cast<std::size_t>(l)], 1);
    h = conv_block(h, dl + ".conv0", dl + ".norm0", dc, conv_same3());
    h = conv_block(h, dl + ".conv1", dl + ".norm1", dc, conv_same3());
    const bool supervised = std::find(plan_.supervised_levels.begin(),
                                      plan_.supervised_levels.end(),
                                      l) != plan_.supervised_levels.end();
    if (supervised && (train || l == 0)) {
      const std::string hd = "head" + std::to_string(l);
      heads[l] = conv3d(g, h, P(hd + ".w"), P(hd + ".b"), ConvGeom{});
    }
  }

  std::vector<Val> outputs;
  for (const auto& [level, val] : heads) outputs.push_back(val);
  return outputs;  // ascending level = highest resolution first
}

// ---- checkpoint container ----

namespace {

constexpr char kMagic[8] = {'A', 'X', 'U', 'N', 'E', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}
void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint file truncated");
  }
  void read(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(
        static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(
               buf[pos + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(
               buf[pos + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const std::uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
};

void atomic_write(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

template <class T>
void Network<T>::save_checkpoint(const std::string& path) const {
  std::string out;
  put_bytes(out, kMagic, 8);
  put_u32(out, kVersion);
  const std::string cfg = plan_.cfg.canonical();
  put_u64(out, fnv1a64(cfg));
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  put_bytes(out, cfg.data(), cfg.size());
  put_u32(out, static_cast<std::uint32_t>(store_.size()));
  for (const auto& [name, tensor] : store_) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    out.push_back(static_cast<char>(tensor.rank()));
    for (auto e : tensor.shape()) put_u64(out, static_cast<std::uint64_t>(e));
    for (std::int64_t i = 0; i < tensor.size(); ++i)
      put_f32(out, static_cast<float>(tensor[i]));
  }
  atomic_write(path, out);
}

template <class T>
Network<T> Network<T>::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Reader r{buf};
  char magic[8];
  r.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("'" + path + "' is not a network checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t digest = r.u64();
  const std::uint32_t cfg_len = r.u32();
  std::string cfg_text(cfg_len, '\0');
  r.read(cfg_text.data(), cfg_len);
  if (fnv1a64(cfg_text) != digest)
    throw std::runtime_error("checkpoint config digest mismatch in '" + path + "'");

  Network<T> net = Network<T>::build(NetworkConfig::from_canonical(cfg_text), 0);
  const std::uint32_t count = r.u32();
  if (count != net.store_.size())
    throw std::runtime_error("checkpoint has " + std::to_string(count) + " parameters, network " +
                             std::to_string(net.store_.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name(name_len, '\0');
    r.read(name.data(), name_len);
    std::uint8_t rank;
    r.read(&rank, 1);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::int64_t>(r.u64());
    if (!net.has_param(name))
      throw std::runtime_error("checkpoint parameter '" + name + "' not in network");
    Tensor<T>& dst = net.param(name);
    if (dst.shape() != shape)
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " +
                               shape_str(shape) + ", expected " + shape_str(dst.shape()));
    for (std::int64_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(r.f32());
  }
  if (r.pos != buf.size()) throw std::runtime_error("trailing bytes in checkpoint '" + path + "'");
  return net;
}

template class Network<float>;
template class Network<double>;

}  // namespace axunet
