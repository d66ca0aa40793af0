#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

#include "fairmtl/dataset.hpp"
#include "fairmtl/error.hpp"
#include "fairmtl/fairness.hpp"
#include "fairmtl/mitigation.hpp"
#include "fairmtl/rng.hpp"
#include "support.hpp"

using namespace fairmtl;
using namespace fairmtl::mitigation;

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

TrainConfig Tiny() {
  TrainConfig c;
  c.lstm_hidden = 3;
  c.dense_units = 2;
  c.epochs = 10;
  c.checkpoint_every = 5;
  c.mc_passes = 4;
  c.batch_size = 16;
  c.seed = 7;
  return c;
}

dataset::Cohort SmallCohort(std::size_t n = 60, std::uint64_t seed = 3) {
  auto split = dataset::Standardize(dataset::SplitCohortByWindow(dataset::GenerateSynthetic(n, 0.8, seed), seed));
  return split.train;
}

UncertaintyRecord Rec(std::uint32_t epoch, double ca, double cp) {
  UncertaintyRecord r;
  r.epoch = epoch;
  r.c_anxiety = ca;
  r.c_protected = cp;
  return r;
}

}  // namespace

TEST_SUITE("mitigation") {
  TEST_CASE("config validation") {
    const auto bad = [](auto edit) {
      TrainConfig c = Tiny();
      edit(c);
      return CodeOf([&] { c.Validate(); });
    };
    CHECK(bad([](TrainConfig& c) { c.checkpoint_every = 0; }) == ErrorCode::kInvalidInput);
    CHECK(bad([](TrainConfig& c) { c.epochs = 12; }) == ErrorCode::kInvalidInput);
    CHECK(bad([](TrainConfig& c) { c.task_weights[1] = -0.1; }) == ErrorCode::kInvalidInput);
    CHECK(bad([](TrainConfig& c) { c.mc_passes = 1; }) == ErrorCode::kInvalidInput);
    CHECK(bad([](TrainConfig& c) { c.keep_rate = 0.0; }) == ErrorCode::kInvalidInput);
    CHECK(bad([](TrainConfig& c) { c.keep_rate = 1.1; }) == ErrorCode::kInvalidInput);
    CHECK(bad([](TrainConfig& c) { c.lr = 0.0; }) == ErrorCode::kInvalidInput);
    CHECK(bad([](TrainConfig& c) { c.batch_size = 0; }) == ErrorCode::kInvalidInput);
    CHECK_NOTHROW(Tiny().Validate());
  }

  TEST_CASE("checkpoint count and files") {
    const auto train = SmallCohort(40);
    TrainConfig c = Tiny();
    c.epochs = 100;
    c.checkpoint_every = 5;
    c.batch_size = 64;
    const auto dir = std::filesystem::temp_directory_path() / "fairmtl_ckpt_count";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const auto set = TrainMtlWithCheckpoints(train, "group", c, dir);
    REQUIRE(set.checkpoints.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) {
      CHECK(set.checkpoints[i].epoch == 5 * (i + 1));
      CHECK(std::filesystem::exists(dir / CheckpointFileName(set.checkpoints[i].epoch)));
      CHECK(nnet::LoadCheckpoint(set.checkpoints[i].path) == set.checkpoints[i].params);
    }
    CHECK(set.epoch_losses.size() == 100);
    CHECK(set.epoch_task_losses.size() == 100);

    c.epochs = 5;
    CHECK(TrainMtlWithCheckpoints(train, "group", c).checkpoints.size() == 1);
  }

  TEST_CASE("zero epochs returns the initial parameters") {
    const auto train = SmallCohort();
    TrainConfig c = Tiny();
    c.epochs = 0;
    const auto r = TrainBaseline(train, c);
    CHECK(r.epoch_losses.empty());
    CHECK(r.params == nnet::InitParams(c.Architecture(1), SubSeed(c.seed, "baseline-init")));
    CHECK(TrainMtlWithCheckpoints(train, "group", c).checkpoints.empty());
    CHECK(CodeOf([&] { RunMitigation(train, train, "group", c); }) == ErrorCode::kNoCheckpoints);
  }

  TEST_CASE("training is deterministic") {
    const auto train = SmallCohort();
    const auto a = TrainMtlWithCheckpoints(train, "group", Tiny());
    const auto b = TrainMtlWithCheckpoints(train, "group", Tiny());
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
      CHECK(nnet::SerializeCheckpoint(a.checkpoints[i].params) == nnet::SerializeCheckpoint(b.checkpoints[i].params));
    }
    TrainConfig other = Tiny();
    other.seed = 8;
    CHECK_FALSE(TrainMtlWithCheckpoints(train, "group", other).checkpoints.back().params ==
                a.checkpoints.back().params);
  }

  TEST_CASE("reweighted training with unit weights equals the baseline") {
    const auto train = SmallCohort();
    const auto base = TrainBaseline(train, Tiny());
    const std::vector<double> ones(train.size(), 1.0);
    const auto rw = TrainReweighted(train, Tiny(), ones);
    CHECK(nnet::SerializeCheckpoint(rw.params) == nnet::SerializeCheckpoint(base.params));
    CHECK(rw.epoch_losses == base.epoch_losses);
  }

  TEST_CASE("uniform weight scaling does not change training") {
    const auto train = SmallCohort();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.2, 3.0);
    std::vector<double> w, w2;
    for (std::size_t i = 0; i < train.size(); ++i) {
      w.push_back(u(rng));
      w2.push_back(2.0 * w.back());
    }
    const auto a = TrainReweighted(train, Tiny(), w);
    const auto b = TrainReweighted(train, Tiny(), w2);
    for (std::size_t k = 0; k < a.params.tensors.size(); ++k) {
      const auto& x = a.params.tensors[k].tensor.data;
      const auto& y = b.params.tensors[k].tensor.data;
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - y[i]) <= 1e-9);
    }
  }

  TEST_CASE("a zero-weight sample contributes nothing") {
    using namespace fairmtl::nnet;
    std::mt19937_64 rng(12);
    Architecture arch;
    arch.features = 3;
    arch.lstm_hidden = 2;
    arch.dense_units = 2;
    arch.heads = 1;
    const auto params = testing_support::RandomParams(arch, rng);
    std::vector<Tensor> xs;
    for (int i = 0; i < 4; ++i) xs.push_back(testing_support::RandomInput(arch, rng));
    BatchInput all, kept;
    for (const auto& x : xs) all.emplace_back(x.data);
    for (int i : {0, 1, 3}) kept.emplace_back(xs[std::size_t(i)].data);
    Matrix t_all(1, 4), t_kept(1, 3);
    t_all << 1, 0, 1, 1;
    t_kept << 1, 0, 1;
    const std::vector<double> tw = {1.0};
    const std::vector<double> w_all = {0.7, 1.3, 0.0, 2.0};
    const std::vector<double> w_kept = {0.7, 1.3, 2.0};
    const auto fa = Forward(params, all);
    const auto fk = Forward(params, kept);
    CHECK(MtlLoss(fa.outputs, t_all, tw, w_all).total ==
          doctest::Approx(MtlLoss(fk.outputs, t_kept, tw, w_kept).total).epsilon(1e-14));
    const auto ga = Backward(params, fa, t_all, tw, w_all);
    const auto gk = Backward(params, fk, t_kept, tw, w_kept);
    for (std::size_t k = 0; k < ga.size(); ++k) {
      for (std::size_t i = 0; i < ga[k].data.size(); ++i) {
        CHECK(std::abs(ga[k].data[i] - gk[k].data[i]) <= 1e-12);
      }
    }
  }

  TEST_CASE("weights are validated") {
    const auto train = SmallCohort();
    std::vector<double> w(train.size(), 1.0);
    w[2] = -1.0;
    CHECK(CodeOf([&] { TrainReweighted(train, Tiny(), w); }) == ErrorCode::kInvalidInput);
    w.pop_back();
    CHECK(CodeOf([&] { TrainReweighted(train, Tiny(), w); }) == ErrorCode::kInvalidInput);
  }

  TEST_CASE("combined loss is the weighted task sum") {
    const auto train = SmallCohort();
    const auto set = TrainMtlWithCheckpoints(train, "group", Tiny());
    // Reconstruct the final-epoch losses without dropout from the last checkpoint.
    const auto& params = set.checkpoints.back().params;
    nnet::BatchInput in;
    for (const auto& w : train.windows) in.emplace_back(w.features.data(), w.features.size());
    const auto groups = dataset::Groups(train, "group");
    nnet::Matrix targets(2, Eigen::Index(train.size()));
    for (std::size_t i = 0; i < train.size(); ++i) {
      targets(0, Eigen::Index(i)) = train.windows[i].anxiety;
      targets(1, Eigen::Index(i)) = groups[i];
    }
    const auto out = nnet::Forward(params, in).outputs;
    const std::vector<double> tw = {4.5, 0.5};
    const auto l = nnet::MtlLoss(out, targets, tw);
    CHECK(l.total == doctest::Approx(4.5 * l.per_task[0] + 0.5 * l.per_task[1]).epsilon(1e-12));
    for (std::size_t e = 0; e < set.epoch_losses.size(); ++e) {
      const auto& t = set.epoch_task_losses[e];
      CHECK(set.epoch_losses[e] == doctest::Approx(4.5 * t[0] + 0.5 * t[1]).epsilon(1e-9));
    }
  }

  TEST_CASE("keep rate one gives zero uncertainty") {
    const auto train = SmallCohort();
    TrainConfig c = Tiny();
    const auto set = TrainMtlWithCheckpoints(train, "group", c);
    c.keep_rate = 1.0;
    for (const auto& r : EvaluateUncertainties(set.checkpoints, train, c)) {
      CHECK(r.c_anxiety == 0.0);
      CHECK(r.c_protected == 0.0);
    }
  }

  TEST_CASE("MC estimates do not depend on batching") {
    const auto train = SmallCohort(100);
    const auto set = TrainMtlWithCheckpoints(train, "group", Tiny());
    const auto& params = set.checkpoints.back().params;
    const auto full = McEstimates(params, train, 6, 0.8, 11);
    dataset::Cohort tail;
    tail.windows.assign(train.windows.begin() + 40, train.windows.end());
    // Indices restart in the sub-cohort, so compare the first sample with itself instead.
    dataset::Cohort one;
    one.windows.push_back(train.windows[0]);
    const auto single = McEstimates(params, one, 6, 0.8, 11);
    CHECK(single[0].mean == full[0].mean);
    CHECK(single[0].variance == full[0].variance);
    CHECK(McEstimates(params, train, 6, 0.8, 11)[50].mean == full[50].mean);
    CHECK(McEstimates(params, tail, 6, 0.8, 11).size() == tail.size());
  }

  TEST_CASE("pooling averages per-sample estimates") {
    std::vector<nnet::McEstimate> est(2);
    est[0].mean = {0.2, 0.6};
    est[0].variance = {0.1, 0.3};
    est[1].mean = {0.4, 0.8};
    est[1].variance = {0.3, 0.5};
    const auto r = PoolEstimates(15, est, 50);
    CHECK(r.epoch == 15);
    CHECK(r.passes == 50);
    CHECK(r.c_anxiety == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(r.c_protected == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(r.p_anxiety == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(r.gap() == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(CodeOf([] { PoolEstimates(1, {}, 2); }) == ErrorCode::kEmptyCohort);
  }

  TEST_CASE("selection picks the largest gap, earliest on ties") {
    const std::vector<UncertaintyRecord> recs = {Rec(5, 0.01, 0.02), Rec(10, 0.01, 0.05), Rec(15, 0.02, 0.03)};
    const auto s = SelectCheckpoint(recs);
    CHECK(s.chosen_epoch == 10);
    CHECK(s.gap == doctest::Approx(0.04));
    CHECK(s.records.size() == 3);

    const std::vector<UncertaintyRecord> tie = {Rec(20, 0.0, 0.1), Rec(10, 0.0, 0.1), Rec(15, 0.0, 0.05)};
    CHECK(SelectCheckpoint(tie).chosen_epoch == 10);

    const std::vector<UncertaintyRecord> negative = {Rec(5, 0.3, 0.1), Rec(10, 0.2, 0.1)};
    CHECK(SelectCheckpoint(negative).chosen_epoch == 10);
    CHECK(CodeOf([] { SelectCheckpoint({}); }) == ErrorCode::kNoCheckpoints);
  }

  TEST_CASE("final prediction is repeatable and uses the anxiety head") {
    const auto train = SmallCohort();
    const auto set = TrainMtlWithCheckpoints(train, "group", Tiny());
    const auto& params = set.checkpoints.back().params;
    const auto a = FinalPredict(params, train);
    const auto b = FinalPredict(params, train);
    CHECK(a.probabilities == b.probabilities);
    CHECK(a.labels == b.labels);
    nnet::BatchInput in;
    for (const auto& w : train.windows) in.emplace_back(w.features.data(), w.features.size());
    const auto out = nnet::Forward(params, in).outputs;
    for (std::size_t i = 0; i < train.size(); ++i) {
      CHECK(a.probabilities[i] == out(0, Eigen::Index(i)));
      CHECK(a.labels[i] == (out(0, Eigen::Index(i)) >= 0.5 ? 1 : 0));
    }
  }

  TEST_CASE("a separable cohort is learned") {
    dataset::SyntheticOptions opt;
    opt.label_shift = 2.0;
    auto split =
        dataset::Standardize(dataset::SplitCohortByWindow(dataset::GenerateSynthetic(300, 0.0, 5, opt), 5));
    TrainConfig c = Tiny();
    c.lstm_hidden = 8;
    c.dense_units = 4;
    c.epochs = 30;
    c.lr = 1e-2;
    const auto r = TrainBaseline(split.train, c);
    CHECK(r.epoch_losses.back() < r.epoch_losses.front());
    const auto pred = FinalPredict(r.params, split.train);
    CHECK(fairness::Accuracy(pred.labels, dataset::Labels(split.train)) > 0.9);
  }

  TEST_CASE("full pipeline selects an existing checkpoint") {
    const auto train = SmallCohort();
    const auto result = RunMitigation(train, train, "group", Tiny());
    CHECK(result.Selected().epoch == result.selection.chosen_epoch);
    CHECK(result.selection.records.size() == result.checkpoints.checkpoints.size());
    const auto j = RecordsJson(result.selection.records);
    CHECK(j.size() == 2);
    CHECK(j[0].contains("gap"));
    CHECK(SelectionJson(result.selection)["chosen_epoch"] == result.selection.chosen_epoch);
  }
}
