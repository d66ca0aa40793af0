#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fairmtl/error.hpp"
#include "fairmtl/io.hpp"
#include "fairmtl/nnet.hpp"
#include "oracles/nnet_oracle.hpp"
#include "support.hpp"

using namespace fairmtl;
using namespace fairmtl::nnet;
using testing_support::RandomInput;
using testing_support::RandomParams;

namespace {

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

Architecture Small(std::size_t f, std::size_t h, std::size_t d, std::size_t k) {
  Architecture a;
  a.features = f;
  a.lstm_hidden = h;
  a.dense_units = d;
  a.heads = k;
  return a;
}

}  // namespace

TEST_SUITE("nnet") {
  TEST_CASE("zero parameters give 0.5 on every head") {
    const Architecture arch;
    const auto params = ZeroParams(arch);
    std::mt19937_64 rng(1);
    const auto tr = Forward(params, RandomInput(arch, rng));
    for (Eigen::Index k = 0; k < tr.outputs.rows(); ++k) CHECK(tr.outputs(k, 0) == 0.5);
    CHECK(tr.trunk.isZero(0.0));
  }

  TEST_CASE("zero-weight lstm ends in a zero hidden state") {
    std::mt19937_64 rng(2);
    const Architecture arch = Small(5, 3, 2, 2);
    auto params = RandomParams(arch, rng);
    for (auto name : {"lstm.W_x", "lstm.W_h", "lstm.b"}) {
      for (double& v : params.Get(name).data) v = 0.0;
    }
    const auto tr = Forward(params, RandomInput(arch, rng));
    CHECK(tr.trunk.isZero(0.0));
  }

  TEST_CASE("forward matches the scalar lstm") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const auto arch = testing_support::RandomArchitecture(rng);
      const auto params = RandomParams(arch, rng);
      const auto x = RandomInput(arch, rng);
      const auto net = oracle::FromParams(params, arch.steps);
      const auto ref = oracle::ScalarLogits(net, x.data);
      const auto tr = Forward(params, x);
      for (std::size_t k = 0; k < arch.heads; ++k) {
        CHECK(std::abs(tr.logits(Eigen::Index(k), 0) - ref[k]) <= 1e-12);
      }
    }
  }

  TEST_CASE("forward without a mask is repeatable and batch independent") {
    std::mt19937_64 rng(4);
    const Architecture arch = Small(4, 3, 2, 2);
    const auto params = RandomParams(arch, rng);
    const auto a = RandomInput(arch, rng), b = RandomInput(arch, rng);
    const auto t1 = Forward(params, a), t2 = Forward(params, a);
    CHECK(t1.outputs == t2.outputs);
    const auto both = Forward(params, BatchInput{a.data, b.data});
    CHECK(both.outputs.col(0) == t1.outputs.col(0));
  }

  TEST_CASE("shape mismatch") {
    const Architecture arch = Small(4, 2, 0, 1);
    const auto params = ZeroParams(arch);
    CHECK(CodeOf([&] { Forward(params, Tensor({24, 5})); }) == ErrorCode::kShapeMismatch);
  }

  TEST_CASE("loss examples") {
    Matrix half = Matrix::Constant(2, 1, 0.5);
    Matrix y(2, 1);
    y << 1, 0;
    const std::vector<double> w = {4.5, 0.5};
    CHECK(MtlLoss(half, y, w).total == doctest::Approx(5.0 * std::log(2.0)).epsilon(1e-15));

    Matrix perfect(2, 1);
    perfect << 1.0, 0.0;
    const auto l = MtlLoss(perfect, y, w);
    CHECK(l.total >= 0.0);
    CHECK(l.total <= 4.5 * -std::log(1.0 - 1e-12) + 0.5 * -std::log(1.0 - 1e-12) + 1e-15);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    Matrix out(2, 7), tgt(2, 7);
    for (Eigen::Index s = 0; s < 7; ++s) {
      for (Eigen::Index k = 0; k < 2; ++k) {
        out(k, s) = u(rng);
        tgt(k, s) = u(rng) > 0.5 ? 1 : 0;
      }
    }
    const std::vector<double> only_first = {1.0, 0.0};
    double bce = 0.0;
    for (Eigen::Index s = 0; s < 7; ++s) {
      bce += -(tgt(0, s) * std::log(out(0, s)) + (1 - tgt(0, s)) * std::log(1 - out(0, s)));
    }
    CHECK(MtlLoss(out, tgt, only_first).total == doctest::Approx(bce / 7).epsilon(1e-14));
    const auto parts = MtlLoss(out, tgt, w);
    CHECK(std::abs(parts.total - (4.5 * parts.per_task[0] + 0.5 * parts.per_task[1])) <= 1e-12);
  }

  TEST_CASE("logistic regression gradient is (p - y) x") {
    std::mt19937_64 rng(6);
    const Architecture arch = Small(2, 0, 0, 1);
    const auto params = RandomParams(arch, rng);
    const auto x = RandomInput(arch, rng);
    Matrix y(1, 1);
    y << 1.0;
    const std::vector<double> w = {1.0};
    const auto tr = Forward(params, x);
    const auto g = Backward(params, tr, y, w);
    const double p = tr.outputs(0, 0);
    const auto& hw = g[0];  // head.W is first when there is no lstm/dense
    REQUIRE(params.tensors[0].name == "head.W");
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(hw.data[i] == doctest::Approx((p - 1.0) * x.data[i]).epsilon(1e-14));
    CHECK(g[1].data[0] == doctest::Approx(p - 1.0).epsilon(1e-14));
  }

  TEST_CASE("parameter gradients match finite differences") {
    std::mt19937_64 rng(7);
    double worst = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
      const auto arch = testing_support::RandomArchitecture(rng);
      const auto r = testing_support::CheckParameterGradients(arch, rng, trial % 2 == 1);
      worst = std::max(worst, r.max_rel_err);
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("input gradients match finite differences") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
      const auto arch = testing_support::RandomArchitecture(rng);
      CHECK(testing_support::CheckInputGradient(arch, rng).max_rel_err < 1e-4);
    }
  }

  TEST_CASE("a dropped unit receives no gradient") {
    std::mt19937_64 rng(9);
    const Architecture arch = Small(3, 3, 2, 2);
    const auto params = RandomParams(arch, rng);
    const auto x = RandomInput(arch, rng);
    DropoutMask mask;
    mask.keep_rate = 0.5;
    mask.trunk = Matrix::Ones(3, 1);
    mask.dense = Matrix::Ones(2, 1);
    mask.dense(1, 0) = 0.0;
    const auto tr = Forward(params, BatchInput{x.data}, &mask);
    Matrix y = Matrix::Ones(2, 1);
    const std::vector<double> w = {1.0, 1.0};
    const auto g = Backward(params, tr, y, w);
    std::size_t dense_w = 0, dense_b = 0, head_w = 0;
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      if (params.tensors[i].name == "dense.W") dense_w = i;
      if (params.tensors[i].name == "dense.b") dense_b = i;
      if (params.tensors[i].name == "head.W") head_w = i;
    }
    for (std::size_t c = 0; c < 3; ++c) CHECK(g[dense_w].data[1 * 3 + c] == 0.0);
    CHECK(g[dense_b].data[1] == 0.0);
    CHECK(g[head_w].data[0 * 2 + 1] == 0.0);
    CHECK(g[head_w].data[1 * 2 + 1] == 0.0);
  }

  TEST_CASE("stale trace") {
    std::mt19937_64 rng(10);
    const auto a = RandomParams(Small(3, 2, 0, 1), rng);
    const auto b = RandomParams(Small(3, 3, 0, 1), rng);
    const auto tr = Forward(a, RandomInput(Small(3, 2, 0, 1), rng));
    const std::vector<double> w = {1.0};
    CHECK(CodeOf([&] { Backward(b, tr, Matrix::Ones(1, 1), w); }) == ErrorCode::kStaleTrace);
    CHECK(CodeOf([&] { Backward(a, tr, Matrix::Ones(2, 1), w); }) == ErrorCode::kStaleTrace);
  }

  TEST_CASE("adam") {
    ModelParams p;
    p.tensors.push_back({"w", Tensor({1})});
    p.tensors[0].tensor.data[0] = 1.0;
    auto state = MakeAdamState(p);
    Gradients zero = ZeroGradients(p);
    AdamStep(p, zero, state, 0.1);
    CHECK(p.tensors[0].tensor.data[0] == 1.0);

    state = MakeAdamState(p);
    for (int i = 0; i < 100; ++i) {
      Gradients g = ZeroGradients(p);
      g[0].data[0] = 2.0 * p.tensors[0].tensor.data[0];
      AdamStep(p, g, state, 0.1);
    }
    CHECK(std::abs(p.tensors[0].tensor.data[0]) < 0.1);

    // The same scalar recursion written out independently.
    double w = 1.0, m = 0.0, v = 0.0;
    ModelParams q;
    q.tensors.push_back({"w", Tensor({1})});
    q.tensors[0].tensor.data[0] = 1.0;
    auto qs = MakeAdamState(q);
    for (int t = 1; t <= 50; ++t) {
      const double g = 2.0 * w;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      Gradients gq = ZeroGradients(q);
      gq[0].data[0] = 2.0 * q.tensors[0].tensor.data[0];
      AdamStep(q, gq, qs, 0.1);
    }
    CHECK(q.tensors[0].tensor.data[0] == doctest::Approx(w).epsilon(1e-14));
  }

  TEST_CASE("inverted dropout preserves the expected activation") {
    const Architecture arch = Small(3, 4, 5, 2);
    Rng rng(11);
    const std::size_t n = 20000;
    const auto mask = SampleMask(arch, n, 0.8, rng);
    const double mean = (mask.trunk / 0.8).mean();
    const double sigma = std::sqrt(0.8 * 0.2) / 0.8 / std::sqrt(double(mask.trunk.size()));
    CHECK(std::abs(mean - 1.0) < 3.0 * sigma);
    for (Eigen::Index i = 0; i < mask.dense.size(); ++i) {
      const double v = mask.dense.data()[i];
      CHECK((v == 0.0 || v == 1.0));
    }
  }

  TEST_CASE("mc forward") {
    std::mt19937_64 rng(12);
    const Architecture arch = Small(3, 4, 3, 2);
    const auto params = RandomParams(arch, rng);
    const auto x = RandomInput(arch, rng);
    Rng mc(1);
    const auto det = McForward(params, x, 10, 1.0, mc);
    CHECK(det.variance[0] == 0.0);
    CHECK(det.variance[1] == 0.0);
    const auto tr = Forward(params, x);
    CHECK(det.mean[0] == doctest::Approx(tr.outputs(0, 0)).epsilon(1e-15));

    // Two passes landing on {0, 1}: force it with a huge head weight and
    // complementary masks on a single trunk unit.
    const Architecture one = Small(1, 0, 0, 1);
    ModelParams lin = ZeroParams(one);
    Tensor in({24, 1});
    in.data[0] = 1.0;
    lin.Get("head.W").data[0] = 100.0;
    lin.Get("head.b").data[0] = -50.0;
    DropoutMask masks;
    masks.keep_rate = 1.0;
    masks.trunk = Matrix::Ones(24, 2);
    masks.trunk(0, 1) = 0.0;
    const auto est = McForward(lin, in, masks);
    CHECK(est.mean[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(est.variance[0] == doctest::Approx(0.25).epsilon(1e-12));
  }

  TEST_CASE("checkpoint round trip and corruption") {
    std::mt19937_64 rng(13);
    auto params = RandomParams(Small(25, 4, 3, 2), rng);
    params.epoch = 35;
    params.rng_seed = 0xdeadbeefcafef00dULL;
    params.tensors[0].tensor.data[0] = -0.0;
    params.tensors[0].tensor.data[1] = 5e-324;
    const auto dir = std::filesystem::temp_directory_path() / "fairmtl_ckpt";
    std::filesystem::create_directories(dir);
    const auto path = dir / "c.bin";
    SaveCheckpoint(params, path);
    const auto loaded = LoadCheckpoint(path);
    CHECK(loaded == params);
    CHECK(std::signbit(loaded.tensors[0].tensor.data[0]));
    CHECK(SerializeCheckpoint(loaded) == io::ReadFile(path));

    const std::string bytes = SerializeCheckpoint(params);
    CHECK(bytes.substr(0, 4) == "FRLT");
    CHECK(bytes[4] == 1);
    CHECK(static_cast<unsigned char>(bytes[8]) == 35);
    CHECK(CodeOf([&] { DeserializeCheckpoint(bytes.substr(0, bytes.size() - 12)); }) ==
          ErrorCode::kCorruptCheckpoint);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK(CodeOf([&] { DeserializeCheckpoint(bad); }) == ErrorCode::kCorruptCheckpoint);
    std::string bumped = bytes;
    bumped[4] = 2;
    CHECK(CodeOf([&] { DeserializeCheckpoint(bumped); }) == ErrorCode::kUnsupportedVersion);
    CHECK(CodeOf([&] { DeserializeCheckpoint(bytes + "x"); }) == ErrorCode::kCorruptCheckpoint);
    CHECK(CodeOf([&] { LoadCheckpoint(dir / "missing.bin"); }) == ErrorCode::kIo);
  }

  TEST_CASE("init is deterministic and sets the forget bias") {
    const Architecture arch = Small(25, 6, 4, 2);
    const auto a = InitParams(arch, 42), b = InitParams(arch, 42), c = InitParams(arch, 43);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    const auto& bias = a.Get("lstm.b").data;
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(bias[i] == 0.0);
      CHECK(bias[6 + i] == 1.0);
    }
    CHECK(InferArchitecture(a) == arch);
  }
}
