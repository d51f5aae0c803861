#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "axunet/network.hpp"
#include "axunet/rng.hpp"
#include "test_util.hpp"

using namespace axunet;
using axunet::testing::random_tensor;

namespace {

NetworkConfig tiny_config(const char* preset_name) {
  NetworkConfig cfg = desk_config(preset_by_name(preset_name));
  cfg.levels = 3;
  cfg.patch = {8, 8, 8};
  return cfg;
}

std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("preset roster matches the published table") {
  const auto& presets = model_presets();
  REQUIRE(presets.size() == 5);
  CHECK(presets[0].name == "BL");
  CHECK(presets[0].batch_size == 5);
  CHECK(presets[0].norm == NormKind::batch);
  CHECK(presets[0].encoder_scale == 1);
  CHECK_FALSE(presets[0].attention);
  for (std::size_t i = 1; i < presets.size(); ++i) CHECK(presets[i].batch_size == 2);
  CHECK(preset_by_name("bl+l").encoder_scale == 2);
  CHECK(preset_by_name("bl-gn").norm == NormKind::group);
  CHECK(preset_by_name("BL+AA").attention);
  CHECK(preset_by_name("bl-l-gn").norm == NormKind::group);
  CHECK(preset_by_name("bl-l-gn").encoder_scale == 2);
  CHECK_THROWS_AS(preset_by_name("BL+XX"), std::invalid_argument);
}

TEST_CASE("paper-scale encoder channel laws") {
  const NetworkPlan bl = plan_network(paper_config(preset_by_name("BL")));
  CHECK(bl.encoder_channels == std::vector<int>{32, 64, 128, 256, 320});
  CHECK(bl.decoder_channels == std::vector<int>{32, 64, 128, 256});

  const NetworkPlan bll = plan_network(paper_config(preset_by_name("BL+L")));
  CHECK(bll.encoder_channels == std::vector<int>{64, 128, 256, 512, 512});
  CHECK(bll.decoder_channels == std::vector<int>{32, 64, 128, 256});
}

TEST_CASE("desk-scale channel law") {
  const NetworkPlan p = plan_network(desk_config(preset_by_name("BL")));
  CHECK(p.encoder_channels == std::vector<int>{8, 16, 32, 64});
}

TEST_CASE("deep supervision skips the two lowest resolutions") {
  const NetworkPlan p5 = plan_network(paper_config(preset_by_name("BL")));
  CHECK(p5.supervised_levels == std::vector<int>{0, 1, 2});
  const NetworkPlan p4 = plan_network(desk_config(preset_by_name("BL")));
  CHECK(p4.supervised_levels == std::vector<int>{0, 1});
}

TEST_CASE("attention schedule at paper scale") {
  const NetworkPlan p = plan_network(paper_config(preset_by_name("BL+AA")));
  REQUIRE(p.attention_sites.size() == 4);
  const int heads[4] = {4, 8, 16, 32};
  const int dims[4] = {16, 32, 64, 128};
  for (int i = 0; i < 4; ++i) {
    CHECK(p.attention_sites[static_cast<std::size_t>(i)].level == i + 1);
    CHECK(p.attention_sites[static_cast<std::size_t>(i)].heads == heads[i]);
    CHECK(p.attention_sites[static_cast<std::size_t>(i)].head_dim == dims[i]);
  }
  // presets without the attention flag have no sites
  CHECK(plan_network(paper_config(preset_by_name("BL"))).attention_sites.empty());
}

TEST_CASE("plan rejects indivisible patch sizes and short networks") {
  NetworkConfig cfg = desk_config(preset_by_name("BL"));
  cfg.patch = {20, 32, 32};  // 20 % 8 != 0
  CHECK_THROWS_WITH_AS(plan_network(cfg), doctest::Contains("divisible"), std::invalid_argument);
  cfg = desk_config(preset_by_name("BL"));
  cfg.levels = 2;
  CHECK_THROWS_AS(plan_network(cfg), std::invalid_argument);
}

TEST_CASE("parameter_count basics") {
  // a 1x1x1 conv with bias contributes exactly 2 scalars
  const NetworkPlan p = plan_network(tiny_config("BL+GN"));
  std::int64_t head0 = 0;
  for (const auto& info : p.params)
    if (info.name == "head0.w" || info.name == "head0.b") head0 += shape_numel(info.shape);
  // 3 regions x 8 channels x 1x1x1 + 3 biases
  CHECK(head0 == 3 * 8 + 3);

  // parameter count is independent of patch size
  NetworkConfig a = desk_config(preset_by_name("BL+GN"));
  NetworkConfig b = a;
  b.patch = {64, 64, 64};
  CHECK(plan_network(a).parameter_count() == plan_network(b).parameter_count());

  // the widened encoder strictly grows the encoder conv parameter count
  auto enc_params = [](const NetworkPlan& plan) {
    std::int64_t n = 0;
    for (const auto& info : plan.params)
      if (info.trainable && info.name.rfind("enc", 0) == 0 && info.name.back() == 'w')
        n += shape_numel(info.shape);
    return n;
  };
  CHECK(enc_params(plan_network(paper_config(preset_by_name("BL+L")))) >
        enc_params(plan_network(paper_config(preset_by_name("BL")))));
}

TEST_CASE("forward produces supervised heads at the right resolutions") {
  NetworkConfig cfg = desk_config(preset_by_name("BL+GN"));
  cfg.patch = {16, 16, 16};
  Network<double> net = Network<double>::build(cfg, 7);
  Graph<double> g;
  Rng rng(1);
  Val in = g.constant(random_tensor<double>(rng, {2, 4, 16, 16, 16}));
  const auto outs = net.forward(g, in, Network<double>::Mode::train);
  REQUIRE(outs.size() == 2);  // 4 levels: supervise levels 0 and 1
  CHECK(g.value(outs[0]).shape() == Shape{2, 3, 16, 16, 16});
  CHECK(g.value(outs[1]).shape() == Shape{2, 3, 8, 8, 8});

  // infer mode returns only the full-resolution output
  Graph<double> g2;
  Val in2 = g2.constant(random_tensor<double>(rng, {1, 4, 16, 16, 16}));
  const auto inf = net.forward(g2, in2, Network<double>::Mode::infer);
  REQUIRE(inf.size() == 1);
  CHECK(g2.value(inf[0]).shape() == Shape{1, 3, 16, 16, 16});
}

TEST_CASE("forward rejects wrong input shapes") {
  NetworkConfig cfg = tiny_config("BL+GN");
  Network<double> net = Network<double>::build(cfg, 7);
  Graph<double> g;
  Rng rng(2);
  Val bad_ch = g.constant(random_tensor<double>(rng, {1, 3, 8, 8, 8}));
  CHECK_THROWS_AS(net.forward(g, bad_ch, Network<double>::Mode::infer), std::invalid_argument);
  Val bad_sp = g.constant(random_tensor<double>(rng, {1, 4, 8, 8, 4}));
  CHECK_THROWS_AS(net.forward(g, bad_sp, Network<double>::Mode::infer), std::invalid_argument);
}

TEST_CASE("encoder/decoder symmetry holds for every preset at desk scale") {
  Rng rng(3);
  for (const auto& preset : model_presets()) {
    NetworkConfig cfg = desk_config(preset);
    cfg.patch = {16, 16, 16};
    Network<double> net = Network<double>::build(cfg, 11);
    Graph<double> g;
    Val in = g.constant(random_tensor<double>(rng, {1, 4, 16, 16, 16}));
    const auto outs = net.forward(g, in, Network<double>::Mode::train);
    CHECK(g.value(outs[0]).shape() == Shape{1, 3, 16, 16, 16});
  }
}

TEST_CASE("BL+AA differs from BL only by the attention blocks") {
  NetworkConfig bl = tiny_config("BL");
  NetworkConfig aa = tiny_config("BL+AA");
  Network<double> nbl = Network<double>::build(bl, 21);
  Network<double> naa = Network<double>::build(aa, 21);

  const auto bl_names = nbl.param_names();
  const auto aa_names = naa.param_names();
  std::set<std::string> sbl(bl_names.begin(), bl_names.end());
  std::set<std::string> saa(aa_names.begin(), aa_names.end());
  for (const auto& n : sbl) CHECK(saa.count(n) == 1);
  for (const auto& n : saa)
    if (sbl.count(n) == 0) CHECK(n.rfind("attn", 0) == 0);
  CHECK(saa.size() > sbl.size());

  // Shared parameters are initialized identically (same name, same seed), so
  // zeroing the attention projections makes the two networks agree exactly.
  for (const auto& n : aa_names)
    if (n.rfind("attn", 0) == 0) {
      Tensor<double>& t = naa.param(n);
      for (std::int64_t i = 0; i < t.size(); ++i) t[i] = 0.0;
    }
  Rng rng(4);
  TensorD input = random_tensor<double>(rng, {1, 4, 8, 8, 8});
  Graph<double> ga, gb;
  const auto oa = nbl.forward(ga, ga.constant(input), Network<double>::Mode::train);
  const auto ob = naa.forward(gb, gb.constant(input), Network<double>::Mode::train);
  REQUIRE(oa.size() == ob.size());
  for (std::size_t i = 0; i < oa.size(); ++i)
    CHECK(testing::max_abs_diff(ga.value(oa[i]), gb.value(ob[i])) == 0.0);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  const std::string dir = std::filesystem::temp_directory_path().string();
  const std::string p1 = dir + "/axunet_test_a.ckpt";
  const std::string p2 = dir + "/axunet_test_b.ckpt";
  NetworkConfig cfg = tiny_config("BL+L+GN");
  Network<float> net = Network<float>::build(cfg, 33);
  net.save_checkpoint(p1);
  Network<float> loaded = Network<float>::load_checkpoint(p1);
  loaded.save_checkpoint(p2);
  CHECK(read_bytes(p1) == read_bytes(p2));
  CHECK(loaded.parameter_count() == net.parameter_count());
  for (const auto& name : net.param_names())
    CHECK(loaded.param(name).same_values(net.param(name)));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);

  // corrupted magic is rejected
  const std::string p3 = dir + "/axunet_test_c.ckpt";
  std::ofstream(p3, std::ios::binary) << "NOTACKPT garbage";
  CHECK_THROWS_AS(Network<float>::load_checkpoint(p3), std::runtime_error);
  std::filesystem::remove(p3);
}

TEST_CASE("checkpoint preserves the full config round trip") {
  NetworkConfig cfg = desk_config(preset_by_name("BL+AA"));
  cfg.patch = {16, 16, 16};
  const NetworkConfig back = NetworkConfig::from_canonical(cfg.canonical());
  CHECK(back.canonical() == cfg.canonical());
  CHECK(back.digest() == cfg.digest());
  CHECK(back.attention == true);
  CHECK(back.norm == NormKind::batch);
}

TEST_CASE("same seed builds identical parameters") {
  NetworkConfig cfg = tiny_config("BL+GN");
  Network<double> a = Network<double>::build(cfg, 5);
  Network<double> b = Network<double>::build(cfg, 5);
  for (const auto& name : a.param_names()) CHECK(a.param(name).same_values(b.param(name)));
  Network<double> c = Network<double>::build(cfg, 6);
  bool any_diff = false;
  for (const auto& name : a.param_names())
    if (!a.param(name).same_values(c.param(name))) any_diff = true;
  CHECK(any_diff);
}
