#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <chrono>

#include "dmsd/backbone.hpp"
#include "dmsd/losses.hpp"
#include "doctest.h"
#include "gradcheck_util.hpp"

using namespace dmsd;
using dmsd::testutil::gradcheck;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig mc;
  mc.segments = 3;
  mc.input_size = 32;
  mc.widths = {8, 8};
  mc.feature_dim = 16;
  mc.head_dim = 16;
  mc.expand_factor = 2;
  mc.stem_pool = true;
  return mc;
}

template <typename S>
SeqTensor<S> random_clip(const ModelConfig& mc, std::uint64_t seed) {
  SeqTensor<S> x(mc.segments, 3, mc.input_size, mc.input_size);
  Rng rng(seed);
  for (Eigen::Index j = 0; j < x.data.cols(); ++j)
    for (Eigen::Index i = 0; i < x.data.rows(); ++i) x.data(i, j) = static_cast<S>(rng.normal());
  return x;
}

// Closed-form parameter count for the architecture as configured.
std::size_t expected_param_count(const ModelConfig& mc, int K) {
  auto conv = [](int cin, int cout, int k) { return static_cast<std::size_t>(cout) * cin * k * k + cout; };
  auto gn = [](int c) { return static_cast<std::size_t>(2) * c; };  // gamma + beta
  std::size_t removal = conv(3, 3 * mc.expand_factor, 1)  // expand
                        + 2 * (3 * mc.expand_factor       // reweight scales
                               + conv(3 * mc.expand_factor, 3 * mc.expand_factor, 3))
                        + conv(3 * mc.expand_factor, 3, 1);  // reduce
  std::size_t extractor = conv(3, mc.widths.front(), 3) + gn(mc.widths.front());  // stem
  for (std::size_t i = 0; i < mc.widths.size(); ++i) {
    int cin = i == 0 ? mc.widths.front() : mc.widths[i - 1];
    int cout = mc.widths[i];
    int stride = i == 0 ? 1 : 2;
    extractor += conv(cin, cout, 3) + conv(cout, cout, 3) + 2 * gn(cout);
    if (cin != cout || stride != 1) extractor += conv(cin, cout, 1) + gn(cout);
  }
  extractor += static_cast<std::size_t>(mc.feature_dim) * mc.widths.back() + mc.feature_dim;
  std::size_t head = static_cast<std::size_t>(mc.head_dim) * (2 * mc.feature_dim) + mc.head_dim +
                     static_cast<std::size_t>(kNumClasses) * mc.head_dim + kNumClasses;
  std::size_t centers = static_cast<std::size_t>(mc.feature_dim) * kNumClasses * K;
  return 2 * removal + 2 * extractor + head + centers;
}

}  // namespace

TEST_CASE("extractor basics") {
  ModelConfig mc = tiny_cfg();
  nn::ParamStore<double> P;
  Extractor<double> ext(P, "e", mc, nn::ParamGroup::backbone);
  P.initialize(5);

  SUBCASE("zero input with bias-free init maps to the zero feature sequence") {
    SeqTensor<double> x(mc.segments, 3, mc.input_size, mc.input_size);
    MatX<double> seq = ext.forward(P, x, nullptr);
    CHECK(seq.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("feature sequence shape and pooled mean identity") {
    SeqTensor<double> x = random_clip<double>(mc, 50);
    MatX<double> seq = ext.forward(P, x, nullptr);
    REQUIRE(seq.rows() == mc.feature_dim);
    REQUIRE(seq.cols() == mc.segments);
    VecX<double> pooled = seq.rowwise().mean();
    for (int i = 0; i < mc.feature_dim; ++i) {
      double acc = 0;
      for (int t = 0; t < mc.segments; ++t) acc += seq(i, t);
      CHECK(pooled(i) == doctest::Approx(acc / mc.segments).epsilon(1e-9));
    }
  }
}

TEST_CASE("predictor contract") {
  nn::ParamStore<double> P;
  Predictor<double> head(P, "h", 8, 6, 0.125, nn::ParamGroup::head);
  P.initialize(9);

  SUBCASE("zero features give zero logits regardless of weights") {
    MatX<double> seq = MatX<double>::Zero(8, 4);
    VecX<double> logits = head.forward(P, seq, nullptr);
    REQUIRE(logits.size() == kNumClasses);
    CHECK(logits.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("dimension mismatch raises a configuration error") {
    MatX<double> bad = MatX<double>::Zero(5, 4);
    CHECK_THROWS_AS(head.forward(P, bad, nullptr), ConfigError);
  }
  SUBCASE("cross-entropy gradient through the head matches finite differences") {
    MatX<double> seq = MatX<double>::Random(8, 4);
    std::vector<int> z = {2};
    auto eval = [&]() {
      VecX<double> logits = head.forward(P, seq, nullptr);
      MatX<double> lm = logits;
      return static_cast<double>(classification_loss<double>(lm, z).loss);
    };
    typename Predictor<double>::Tape tape;
    VecX<double> logits = head.forward(P, seq, &tape);
    MatX<double> lm = logits;
    auto cls = classification_loss<double>(lm, z);
    VecX<double> grad = VecX<double>::Zero(static_cast<Eigen::Index>(P.size()));
    (void)head.backward(P, cls.dLogits.col(0), tape, grad);
    auto res = gradcheck(P.values(), grad, eval, 30, 777);
    CHECK(res.max_coord_err < 1e-4);
    CHECK(res.directional_err < 1e-4);
  }
}

TEST_CASE("full model forward") {
  ModelConfig mc = tiny_cfg();
  DmsdModel<double> model(mc, 2, 0.1, 31);
  SeqTensor<double> x = random_clip<double>(mc, 60);

  SUBCASE("deterministic outputs") {
    auto a = model.forward(x, nullptr);
    auto b = model.forward(x, nullptr);
    CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.s_pooled - b.s_pooled).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("clip order independence") {
    SeqTensor<double> y = random_clip<double>(mc, 61);
    auto ax = model.forward(x, nullptr);
    auto ay = model.forward(y, nullptr);
    auto bx = model.forward(x, nullptr);  // after processing y
    CHECK((ax.logits - bx.logits).cwiseAbs().maxCoeff() == 0.0);
    CHECK((ax.logits - ay.logits).cwiseAbs().maxCoeff() > 0.0);
  }
  SUBCASE("logit vector length and pooled taps") {
    auto out = model.forward(x, nullptr);
    CHECK(out.logits.size() == kNumClasses);
    CHECK(out.s_pooled.size() == mc.feature_dim);
    CHECK(out.m_pooled.size() == mc.feature_dim);
    CHECK(out.s_seq.cols() == mc.segments);
  }
  SUBCASE("parameter count matches the closed form") {
    CHECK(model.params().size() == expected_param_count(mc, 2));
  }
  SUBCASE("extractor parameters are disjoint between streams") {
    auto& P = model.params();
    std::uint64_t before = 0xcbf29ce484222325ULL;
    for (const auto& sp : P.specs())
      if (sp.name.rfind("ext_m.", 0) == 0)
        before = fnv1a(P.values().data() + sp.offset, sizeof(double) * sp.rows * sp.cols, before);
    for (const auto& sp : P.specs())
      if (sp.name.rfind("ext_s.", 0) == 0) {
        P.values()(static_cast<Eigen::Index>(sp.offset)) += 1.0;
        break;
      }
    std::uint64_t after = 0xcbf29ce484222325ULL;
    for (const auto& sp : P.specs())
      if (sp.name.rfind("ext_m.", 0) == 0)
        after = fnv1a(P.values().data() + sp.offset, sizeof(double) * sp.rows * sp.cols, after);
    CHECK(before == after);
  }
}

TEST_CASE("single-stream variant") {
  ModelConfig mc = tiny_cfg();
  mc.kind = "single";
  DmsdModel<double> model(mc, 2, 0.1, 32);
  SeqTensor<double> x = random_clip<double>(mc, 62);
  auto out = model.forward(x, nullptr);
  CHECK(out.logits.size() == kNumClasses);
  CHECK(out.logits.allFinite());
  // No decoupling or motion-stream parameters registered.
  for (const auto& sp : model.params().specs()) {
    CHECK(sp.name.rfind("mrm.", 0) != 0);
    CHECK(sp.name.rfind("srm.", 0) != 0);
    CHECK(sp.name.rfind("ext_m.", 0) != 0);
  }
}

TEST_CASE("end-to-end gradient check on the tiny config") {
  ModelConfig mc = tiny_cfg();
  DmsdModel<double> model(mc, 2, 0.1, 33);
  // Move off the zero-init plateau so gradients flow everywhere.
  Rng r(9);
  auto& P = model.params();
  for (Eigen::Index i = 0; i < P.values().size(); ++i) P.values()(i) += 0.05 * r.normal();
  SeqTensor<double> x = random_clip<double>(mc, 63);
  std::vector<int> z = {3};

  auto eval = [&]() {
    auto out = model.forward(x, nullptr);
    MatX<double> lm = out.logits;
    return static_cast<double>(classification_loss<double>(lm, z).loss);
  };
  typename DmsdModel<double>::Tape tape;
  auto out = model.forward(x, &tape);
  MatX<double> lm = out.logits;
  auto cls = classification_loss<double>(lm, z);
  VecX<double> grad = VecX<double>::Zero(static_cast<Eigen::Index>(P.size()));
  (void)model.backward(tape, cls.dLogits.col(0), VecX<double>(), VecX<double>(), grad);

  auto res = gradcheck(P.values(), grad, eval, 40, 20101, 1e-5);
  CHECK(res.max_coord_err < 1e-3);
  CHECK(res.directional_err < 1e-3);
}

TEST_CASE("gradients through the pooled feature taps") {
  ModelConfig mc = tiny_cfg();
  mc.input_size = 16;
  DmsdModel<double> model(mc, 2, 0.1, 34);
  Rng r(10);
  auto& P = model.params();
  for (Eigen::Index i = 0; i < P.values().size(); ++i) P.values()(i) += 0.05 * r.normal();
  SeqTensor<double> x = random_clip<double>(mc, 64);
  VecX<double> ws = VecX<double>::Random(mc.feature_dim);
  VecX<double> wm = VecX<double>::Random(mc.feature_dim);

  auto eval = [&]() {
    auto out = model.forward(x, nullptr);
    return ws.dot(out.s_pooled) + wm.dot(out.m_pooled);
  };
  typename DmsdModel<double>::Tape tape;
  (void)model.forward(x, &tape);
  VecX<double> grad = VecX<double>::Zero(static_cast<Eigen::Index>(P.size()));
  (void)model.backward(tape, VecX<double>(), ws, wm, grad);
  auto res = gradcheck(P.values(), grad, eval, 30, 4141, 1e-5);
  CHECK(res.max_coord_err < 1e-3);
  CHECK(res.directional_err < 1e-3);
}

TEST_CASE("default config single-clip forward stays under the throughput bound") {
  ModelConfig mc;  // the full 224x224, widths 32/64/128/256 default
  DmsdModel<float> model(mc, 4, 0.1, 35);
  SeqTensor<float> x = random_clip<float>(mc, 65);
  (void)model.forward(x, nullptr);  // warm-up
  auto t0 = std::chrono::steady_clock::now();
  auto out = model.forward(x, nullptr);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(out.logits.allFinite());
  CHECK(secs < 2.0);
  MESSAGE("default-config forward: " << secs << " s/clip");
}
