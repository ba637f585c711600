#include <map>
#include <string>
#include <vector>

#include "dil/model.hpp"
#include "dil/rng.hpp"
#include "doctest.h"

using dil::ArchConfig;
using dil::DilModel;
using dil::DomainSpec;
using dil::HeadMode;
using dil::Strategy;
using dil::Tensor;

namespace {

const std::vector<std::string> kVocab{"car", "bus", "tram", "metro"};

DomainSpec domain(int id, const std::string& name,
                  std::vector<std::string> classes = kVocab) {
  DomainSpec spec;
  spec.domain_id = id;
  spec.name = name;
  spec.class_list = std::move(classes);
  return spec;
}

ArchConfig tiny_arch() {
  ArchConfig arch;
  arch.n_blocks = 2;
  arch.channels = {4, 6};
  arch.f = arch.t = 8;
  return arch;
}

Tensor<double> random_input(int n, int f, int t, uint64_t seed) {
  dil::Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(n) * f * t);
  for (auto& x : v) x = rng.uniform(-2, 2);
  return Tensor<double>::from({n, 1, f, t}, std::move(v));
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("build_model is deterministic and seed-sensitive") {
  auto a = dil::build_model<double>(tiny_arch(), kVocab, domain(0, "a"), 5);
  auto b = dil::build_model<double>(tiny_arch(), kVocab, domain(0, "a"), 5);
  auto c = dil::build_model<double>(tiny_arch(), kVocab, domain(0, "a"), 6);
  CHECK(dil::model_digests(a) == dil::model_digests(b));
  CHECK(dil::model_digests(a) != dil::model_digests(c));
}

TEST_CASE("initialization matches the documented scheme") {
  auto model = dil::build_model<double>(tiny_arch(), kVocab, domain(0, "a"), 5);
  SUBCASE("BN gamma is all ones, beta zeros, stats at (0, 1)") {
    for (const auto& bn : model.banks[0].bn) {
      for (double v : bn.gamma.data()) CHECK(v == 1.0);
      for (double v : bn.beta.data()) CHECK(v == 0.0);
      for (double v : bn.running_mean.data()) CHECK(v == 0.0);
      for (double v : bn.running_var.data()) CHECK(v == 1.0);
    }
  }
  SUBCASE("conv kernels stay within the He-uniform bound, biases zero") {
    int in_ch = 1;
    for (size_t l = 0; l < model.convs.size(); ++l) {
      const double bound = std::sqrt(6.0 / (in_ch * 9.0));
      for (double v : model.convs[l].kernel.data()) {
        CHECK(std::abs(v) <= bound);
      }
      for (double v : model.convs[l].bias.data()) CHECK(v == 0.0);
      in_ch = model.convs[l].kernel.shape()[0];
    }
  }
  SUBCASE("head bias starts at zero") {
    for (double v : model.base_head.bias.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("parameter counts match the closed form") {
  ArchConfig arch;
  arch.n_blocks = 3;
  arch.channels = {16, 32, 64};
  arch.f = arch.t = 64;
  auto model = dil::build_model<double>(arch, kVocab, domain(0, "a"), 1);

  // Convs: (16*1 + 16*16 + 32*16 + 32*32 + 64*32 + 64*64) * 9 kernel weights
  // plus one bias per output channel.
  const long long kernels =
      9LL * (16 * 1 + 16 * 16 + 32 * 16 + 32 * 32 + 64 * 32 + 64 * 64);
  const long long biases = 16 + 16 + 32 + 32 + 64 + 64;
  const long long head = 4LL * 64 + 4;
  const auto audit = dil::param_audit(model);
  CHECK(audit.shared_count == kernels + biases + head);

  // One bank: gamma/beta/mean/var per BN layer plus a head-sized classifier.
  const long long bn = 4LL * (16 + 16 + 32 + 32 + 64 + 64);
  CHECK(audit.per_domain_count == bn + head);
  CHECK(audit.shared_fraction ==
        doctest::Approx(static_cast<double>(kernels + biases + head) /
                        static_cast<double>(kernels + biases + head + bn + head))
            .epsilon(1e-12));
}

TEST_CASE("audit fraction goes to one as the per-domain cost vanishes") {
  CHECK(dil::audit_fraction(100, 0) == 1.0);
  CHECK(dil::audit_fraction(84, 16) == doctest::Approx(0.84));
}

TEST_CASE("full-scale configuration audit is reported") {
  ArchConfig arch;
  arch.n_blocks = 6;
  arch.channels = {64, 128, 256, 512, 1024, 2048};
  arch.f = arch.t = 64;
  std::vector<std::string> vocab;
  std::vector<std::string> classes;
  for (int i = 0; i < 527; ++i) {
    vocab.push_back("label" + std::to_string(i));
    classes.push_back(vocab.back());
  }
  auto model = dil::build_model<float>(arch, vocab, domain(0, "full", classes), 1);
  const auto audit = dil::param_audit(model);
  CHECK(audit.shared_fraction > 0.5);
  CHECK(audit.shared_fraction < 1.0);
  MESSAGE("full-scale shared fraction: " << audit.shared_fraction);
}

TEST_CASE("add_domain copies BN and zero-initializes the head") {
  auto model = dil::build_model<double>(tiny_arch(), kVocab, domain(0, "a"), 5);
  // Perturb bank-0 statistics so the copy is distinguishable from init.
  model.banks[0].bn[1].running_mean.raw_data()[0] = 0.25;
  model.banks[0].bn[2].gamma.raw_data()[1] = 1.5;

  const int id = dil::add_domain(model, domain(1, "b"), HeadMode::kResidual);
  CHECK(id == 1);
  for (size_t l = 0; l < model.banks[0].bn.size(); ++l) {
    CHECK(model.banks[1].bn[l].gamma.digest() ==
          model.banks[0].bn[l].gamma.digest());
    CHECK(model.banks[1].bn[l].beta.digest() ==
          model.banks[0].bn[l].beta.digest());
    CHECK(model.banks[1].bn[l].running_mean.digest() ==
          model.banks[0].bn[l].running_mean.digest());
    CHECK(model.banks[1].bn[l].running_var.digest() ==
          model.banks[0].bn[l].running_var.digest());
  }
  for (double v : model.banks[1].head.weight.data()) CHECK(v == 0.0);
  for (double v : model.banks[1].head.bias.data()) CHECK(v == 0.0);

  SUBCASE("banks copy from the latest bank, not bank 0") {
    model.banks[1].bn[0].gamma.raw_data()[2] = 3.0;
    dil::add_domain(model, domain(2, "c"), HeadMode::kResidual);
    CHECK(model.banks[2].bn[0].gamma.data()[2] == 3.0);
  }
  SUBCASE("wrong domain id is rejected") {
    CHECK_THROWS_AS(dil::add_domain(model, domain(5, "x"), HeadMode::kResidual),
                    dil::ConfigError);
  }
  SUBCASE("unknown class is rejected") {
    CHECK_THROWS_AS(
        dil::add_domain(model, domain(2, "x", {"car", "spaceship"}),
                        HeadMode::kResidual),
        dil::ConfigError);
  }
  SUBCASE("shared-base banks require a full class map") {
    // "metro" exists in the vocabulary; a base trained on a subset cannot
    // share its head with a domain that needs the missing class.
    auto narrow = dil::build_model<double>(
        tiny_arch(), kVocab, domain(0, "a", {"car", "bus"}), 5);
    CHECK_THROWS_AS(
        dil::add_domain(narrow, domain(1, "x", {"car", "metro"}),
                        HeadMode::kSharedBase),
        dil::ConfigError);
    CHECK(dil::add_domain(narrow, domain(1, "y", {"bus", "car"}),
                          HeadMode::kSharedBase) == 1);
  }
}

TEST_CASE("residual banks start as the base classifier on mapped classes") {
  auto model = dil::build_model<double>(tiny_arch(), kVocab, domain(0, "a"), 5);
  auto x = random_input(3, 8, 8, 50);
  auto base = dil::model_forward(model, 0, x, dil::BnMode::kEval);

  SUBCASE("full map in the same order reproduces base logits bit-exactly") {
    dil::add_domain(model, domain(1, "b"), HeadMode::kResidual);
    auto through_new = dil::model_forward(model, 1, x, dil::BnMode::kEval);
    CHECK(through_new.digest() == base.digest());
  }
  SUBCASE("permuted map reproduces the permuted base logits") {
    dil::add_domain(model, domain(1, "b", {"tram", "car"}),
                    HeadMode::kResidual);
    auto through_new = dil::model_forward(model, 1, x, dil::BnMode::kEval);
    for (int n = 0; n < 3; ++n) {
      CHECK(through_new.data()[n * 2 + 0] == base.data()[n * 4 + 2]);
      CHECK(through_new.data()[n * 2 + 1] == base.data()[n * 4 + 0]);
    }
  }
  SUBCASE("unmapped classes start at exactly zero") {
    auto narrow = dil::build_model<double>(
        tiny_arch(), kVocab, domain(0, "a", {"car", "bus"}), 5);
    dil::add_domain(narrow, domain(1, "b", {"car", "metro"}),
                    HeadMode::kResidual);
    auto logits = dil::model_forward(narrow, 1, x, dil::BnMode::kEval);
    for (int n = 0; n < 3; ++n) {
      CHECK(logits.data()[n * 2 + 1] == 0.0);
    }
  }
}

TEST_CASE("bank 0 forward is independent of how many banks exist") {
  auto model = dil::build_model<double>(tiny_arch(), kVocab, domain(0, "a"), 5);
  auto x = random_input(2, 8, 8, 51);
  const auto before = dil::model_forward(model, 0, x, dil::BnMode::kEval);
  dil::add_domain(model, domain(1, "b"), HeadMode::kResidual);
  dil::add_domain(model, domain(2, "c"), HeadMode::kIndependent);
  const auto after = dil::model_forward(model, 0, x, dil::BnMode::kEval);
  CHECK(before.digest() == after.digest());
}

TEST_CASE("forward equals composing the layers by hand") {
  auto model = dil::build_model<double>(tiny_arch(), kVocab, domain(0, "a"), 5);
  // Move stats/affine off their init values to exercise the full path.
  model.banks[0].bn[0].running_mean.raw_data()[1] = 0.2;
  model.banks[0].bn[2].gamma.raw_data()[0] = 1.4;
  auto x = random_input(2, 8, 8, 52);

  auto got = dil::model_forward(model, 0, x, dil::BnMode::kEval);

  Tensor<double> h = x;
  int layer = 0;
  for (int b = 0; b < 2; ++b) {
    for (int c = 0; c < 2; ++c) {
      h = dil::conv2d(h, model.convs[layer].kernel, 1, 1);
      h = dil::conv_bias(h, model.convs[layer].bias);
      h = dil::batchnorm_forward(h, model.banks[0].bn[layer],
                                 dil::BnMode::kEval, false);
      h = dil::relu(h);
      ++layer;
    }
    h = dil::avg_pool2d(h, 2);
  }
  auto want = dil::linear_forward(dil::global_pool(h), model.base_head);
  CHECK(got.digest() == want.digest());
}

TEST_CASE("trainable parameter sets follow the strategy contract") {
  auto model = dil::build_model<double>(
      ArchConfig{}, kVocab, domain(0, "a"), 5);  // 3 blocks, 2 convs: 6 BN layers
  dil::add_domain(model, domain(1, "b"), HeadMode::kResidual);
  dil::add_domain(model, domain(2, "c"), HeadMode::kResidual);

  SUBCASE("adil at step 2: 12 BN vectors plus head weight and bias") {
    auto params = dil::trainable_params(model, Strategy::kAdil, 2);
    CHECK(params.size() == 14);
    for (const auto& p : params) {
      CHECK(p.name.rfind("bank2.", 0) == 0);
    }
  }
  SUBCASE("bn trains only the affine pairs") {
    CHECK(dil::trainable_params(model, Strategy::kBn, 2).size() == 12);
  }
  SUBCASE("clf trains only the bank head") {
    auto params = dil::trainable_params(model, Strategy::kClf, 1);
    REQUIRE(params.size() == 2);
    CHECK(params[0].name == "bank1.head.weight");
    CHECK(params[1].name == "bank1.head.bias");
  }
  SUBCASE("bn_stats trains nothing") {
    CHECK(dil::trainable_params(model, Strategy::kBnStats, 2).empty());
  }
  SUBCASE("fe trains the base head only") {
    auto params = dil::trainable_params(model, Strategy::kFe, 0);
    REQUIRE(params.size() == 2);
    CHECK(params[0].name == "base_head.weight");
  }
  SUBCASE("ft trains every gradient-capable parameter") {
    // 6 convs (kernel+bias) + base head (2) + 3 banks * 6 BN layers * 2
    // affine vectors + 2 bank heads * 2 tensors.
    const size_t expect = 12 + 2 + 3 * 12 + 2 * 2;
    CHECK(dil::trainable_params(model, Strategy::kFt, 0).size() == expect);
  }
  SUBCASE("step without a bank is rejected") {
    CHECK_THROWS_AS(dil::trainable_params(model, Strategy::kAdil, 7),
                    dil::ConfigError);
  }
}

TEST_CASE("strategy names round-trip and errors list all of them") {
  for (const auto& name : dil::strategy_names()) {
    CHECK(dil::strategy_name(dil::strategy_from_name(name)) == name);
  }
  CHECK_THROWS_WITH_AS(
      dil::strategy_from_name("bogus"),
      "unknown strategy 'bogus' (valid: fe, ft, single, multi, bn_stats, "
      "clf, bn, bn_clf, adil)",
      dil::ConfigError);
}

TEST_CASE("class maps resolve by name with -1 for missing classes") {
  auto model = dil::build_model<double>(
      tiny_arch(), kVocab, domain(0, "a", {"car", "bus", "tram"}), 5);
  CHECK(dil::make_class_map(model, {"tram", "metro", "car"}) ==
        std::vector<int>{2, -1, 0});
}

TEST_CASE("clone_model detaches storage") {
  auto model = dil::build_model<double>(tiny_arch(), kVocab, domain(0, "a"), 5);
  auto copy = dil::clone_model(model);
  CHECK(dil::model_digests(copy) == dil::model_digests(model));
  copy.convs[0].kernel.raw_data()[0] += 1.0;
  CHECK(copy.convs[0].kernel.data()[0] != model.convs[0].kernel.data()[0]);
}

TEST_CASE("arch validation catches underflow and width mismatches") {
  ArchConfig arch = tiny_arch();
  SUBCASE("too many pools for the input") {
    arch.f = arch.t = 2;
    CHECK_THROWS_AS(arch.validate(), dil::ConfigError);
  }
  SUBCASE("channel list length") {
    arch.channels = {4};
    CHECK_THROWS_AS(arch.validate(), dil::ConfigError);
  }
  SUBCASE("model build surfaces validation") {
    arch.f = arch.t = 2;
    CHECK_THROWS_AS(
        dil::build_model<double>(arch, kVocab, domain(0, "a"), 1),
        dil::ConfigError);
  }
}

TEST_SUITE_END();
