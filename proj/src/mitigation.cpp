#include "fairmtl/mitigation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fairmtl/error.hpp"
#include "fairmtl/rng.hpp"

namespace fairmtl::mitigation {
namespace {

using nnet::Matrix;

nnet::BatchInput Inputs(const dataset::Cohort& cohort) {
  nnet::BatchInput in;
  in.reserve(cohort.size());
  for (const auto& w : cohort.windows) in.emplace_back(w.features.data(), w.features.size());
  return in;
}

struct EpochCallback {
  std::function<void(std::size_t epoch, const nnet::ModelParams&, double loss,
                     const std::vector<double>& task_losses)>
      fn;
};

// Minibatch Adam over `epochs`; targets are heads x n.
std::vector<double> TrainLoop(nnet::ModelParams& params, const nnet::BatchInput& inputs, const Matrix& targets,
                              std::span<const double> task_weights, std::span<const double> sample_weights,
                              const TrainConfig& config, const EpochCallback& on_epoch) {
  const std::size_t n = inputs.size();
  if (n == 0) throw Error(ErrorCode::kEmptyCohort, "training cohort is empty");
  const nnet::Architecture arch = nnet::InferArchitecture(params);
  nnet::AdamState adam = nnet::MakeAdamState(params);
  Rng dropout_rng = MakeRng(config.seed, "train-dropout");
  std::vector<double> epoch_losses;
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = MakeRng(config.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::vector<double> task_sum(task_weights.size(), 0.0);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const std::size_t b = end - start;
      nnet::BatchInput batch;
      batch.reserve(b);
      Matrix batch_targets(targets.rows(), Eigen::Index(b));
      std::vector<double> batch_weights;
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t idx = order[start + k];
        batch.push_back(inputs[idx]);
        batch_targets.col(Eigen::Index(k)) = targets.col(Eigen::Index(idx));
        if (!sample_weights.empty()) batch_weights.push_back(sample_weights[idx]);
      }
      const nnet::DropoutMask mask = nnet::SampleMask(arch, b, config.keep_rate, dropout_rng);
      const nnet::ForwardTrace trace = nnet::Forward(params, batch, &mask);
      const nnet::LossValue loss = nnet::MtlLoss(trace.outputs, batch_targets, task_weights, batch_weights);
      if (!std::isfinite(loss.total)) {
        std::ostringstream msg;
        msg << "loss " << loss.total << " at epoch " << epoch << ", batch starting at " << start
            << " (lr=" << config.lr << ")";
        throw Error(ErrorCode::kNonFinite, msg.str());
      }
      const auto grads = nnet::Backward(params, trace, batch_targets, task_weights, batch_weights);
      nnet::AdamStep(params, grads, adam, config.lr);
      loss_sum += loss.total * static_cast<double>(b);
      for (std::size_t k = 0; k < task_sum.size(); ++k) task_sum[k] += loss.per_task[k] * static_cast<double>(b);
    }
    const double mean_loss = loss_sum / static_cast<double>(n);
    for (double& t : task_sum) t /= static_cast<double>(n);
    epoch_losses.push_back(mean_loss);
    params.epoch = static_cast<std::uint32_t>(epoch);
    if (on_epoch.fn) on_epoch.fn(epoch, params, mean_loss, task_sum);
  }
  return epoch_losses;
}

Matrix AnxietyTargets(const dataset::Cohort& cohort) {
  Matrix t(1, Eigen::Index(cohort.size()));
  for (std::size_t i = 0; i < cohort.size(); ++i) t(0, Eigen::Index(i)) = cohort.windows[i].anxiety;
  return t;
}

}  // namespace

void TrainConfig::Validate() const {
  const auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidInput, msg); };
  if (checkpoint_every == 0) fail("checkpoint_every must be positive");
  if (epochs % checkpoint_every != 0) fail("epochs must be a multiple of checkpoint_every");
  if (task_weights[0] < 0.0 || task_weights[1] < 0.0) fail("task weights must be non-negative");
  if (mc_passes < 2) fail("mc_passes must be at least 2");
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) fail("keep_rate must lie in (0, 1]");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
}

nnet::Architecture TrainConfig::Architecture(std::size_t heads) const {
  nnet::Architecture a;
  a.steps = dataset::kSteps;
  a.features = dataset::kFeatures;
  a.lstm_hidden = lstm_hidden;
  a.dense_units = dense_units;
  a.heads = heads;
  return a;
}

TrainResult TrainBaseline(const dataset::Cohort& train, const TrainConfig& config) {
  return TrainReweighted(train, config, {});
}

TrainResult TrainReweighted(const dataset::Cohort& train, const TrainConfig& config,
                            std::span<const double> sample_weights) {
  config.Validate();
  if (!sample_weights.empty()) {
    if (sample_weights.size() != train.size()) {
      throw Error(ErrorCode::kInvalidInput, "one weight per training sample required");
    }
    for (double w : sample_weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::kInvalidInput, "sample weights must be >= 0");
    }
  }
  TrainResult result;
  result.params = nnet::InitParams(config.Architecture(1), SubSeed(config.seed, "baseline-init"));
  const double task_weight = 1.0;
  result.epoch_losses = TrainLoop(result.params, Inputs(train), AnxietyTargets(train),
                                  std::span<const double>(&task_weight, 1), sample_weights, config, {});
  return result;
}

std::string CheckpointFileName(std::uint32_t epoch) { return "ckpt_epoch_" + std::to_string(epoch) + ".bin"; }

CheckpointSet TrainMtlWithCheckpoints(const dataset::Cohort& train, const std::string& attribute,
                                      const TrainConfig& config, const std::filesystem::path& dir) {
  config.Validate();
  const auto groups = dataset::Groups(train, attribute);
  Matrix targets(2, Eigen::Index(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) {
    targets(0, Eigen::Index(i)) = train.windows[i].anxiety;
    targets(1, Eigen::Index(i)) = groups[i];
  }
  CheckpointSet set;
  nnet::ModelParams params = nnet::InitParams(config.Architecture(2), SubSeed(config.seed, "mtl-init"));
  EpochCallback cb;
  cb.fn = [&](std::size_t epoch, const nnet::ModelParams& p, double, const std::vector<double>& tasks) {
    set.epoch_task_losses.push_back({tasks[0], tasks[1]});
    if (epoch % config.checkpoint_every != 0) return;
    Checkpoint ck;
    ck.epoch = static_cast<std::uint32_t>(epoch);
    ck.params = p;
    if (!dir.empty()) {
      ck.path = dir / CheckpointFileName(ck.epoch);
      nnet::SaveCheckpoint(ck.params, ck.path);
    }
    set.checkpoints.push_back(std::move(ck));
  };
  set.epoch_losses = TrainLoop(params, Inputs(train), targets, config.task_weights, {}, config, cb);
  return set;
}

UncertaintyRecord PoolEstimates(std::uint32_t epoch, std::span<const nnet::McEstimate> per_sample,
                                std::size_t passes) {
  if (per_sample.empty()) throw Error(ErrorCode::kEmptyCohort, "no samples to pool");
  UncertaintyRecord r;
  r.epoch = epoch;
  r.passes = passes;
  for (const auto& e : per_sample) {
    if (e.mean.size() < 2) throw Error(ErrorCode::kShapeMismatch, "uncertainty needs a two-head model");
    r.p_anxiety += e.mean[0];
    r.p_protected += e.mean[1];
    r.c_anxiety += e.variance[0];
    r.c_protected += e.variance[1];
  }
  const double n = static_cast<double>(per_sample.size());
  r.p_anxiety /= n;
  r.p_protected /= n;
  r.c_anxiety /= n;
  r.c_protected /= n;
  return r;
}

std::vector<nnet::McEstimate> McEstimates(const nnet::ModelParams& params, const dataset::Cohort& cohort,
                                          std::size_t passes, double keep_rate, std::uint64_t seed) {
  const nnet::Architecture arch = nnet::InferArchitecture(params);
  constexpr std::size_t kSamplesPerChunk = 32;
  std::vector<nnet::McEstimate> out;
  out.reserve(cohort.size());
  for (std::size_t start = 0; start < cohort.size(); start += kSamplesPerChunk) {
    const std::size_t end = std::min(cohort.size(), start + kSamplesPerChunk);
    const std::size_t cols = (end - start) * passes;
    nnet::BatchInput batch;
    batch.reserve(cols);
    nnet::DropoutMask mask;
    mask.keep_rate = keep_rate;
    mask.trunk.resize(Eigen::Index(arch.trunk_width()), Eigen::Index(cols));
    if (arch.dense_units > 0) mask.dense.resize(Eigen::Index(arch.dense_units), Eigen::Index(cols));
    for (std::size_t i = start; i < end; ++i) {
      const auto& w = cohort.windows[i].features;
      for (std::size_t t = 0; t < passes; ++t) batch.emplace_back(w.data(), w.size());
      Rng rng = MakeRng(seed, "mc", params.epoch, i);
      const nnet::DropoutMask m = nnet::SampleMask(arch, passes, keep_rate, rng);
      const auto col = Eigen::Index((i - start) * passes);
      mask.trunk.middleCols(col, Eigen::Index(passes)) = m.trunk;
      if (arch.dense_units > 0) mask.dense.middleCols(col, Eigen::Index(passes)) = m.dense;
    }
    const nnet::ForwardTrace tr = nnet::Forward(params, batch, &mask);
    for (std::size_t i = start; i < end; ++i) {
      const auto col = Eigen::Index((i - start) * passes);
      nnet::McEstimate e = nnet::SummarizePasses(tr.outputs, col, passes);
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<UncertaintyRecord> EvaluateUncertainties(std::span<const Checkpoint> checkpoints,
                                                     const dataset::Cohort& eval, const TrainConfig& config) {
  config.Validate();
  if (eval.empty()) throw Error(ErrorCode::kEmptyCohort, "uncertainty evaluation cohort is empty");
  std::vector<UncertaintyRecord> records;
  records.reserve(checkpoints.size());
  for (const auto& ck : checkpoints) {
    nnet::ModelParams params = ck.params;
    params.epoch = ck.epoch;
    const auto est = McEstimates(params, eval, config.mc_passes, config.keep_rate, config.seed);
    records.push_back(PoolEstimates(ck.epoch, est, config.mc_passes));
  }
  return records;
}

SelectionResult SelectCheckpoint(std::span<const UncertaintyRecord> records) {
  if (records.empty()) throw Error(ErrorCode::kNoCheckpoints, "no uncertainty records to select from");
  SelectionResult result;
  result.records.assign(records.begin(), records.end());
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].epoch < records[b].epoch; });
  std::size_t best = order.front();
  for (std::size_t idx : order) {
    if (records[idx].gap() > records[best].gap()) best = idx;
  }
  result.chosen_epoch = records[best].epoch;
  result.gap = records[best].gap();
  return result;
}

Predictions FinalPredict(const nnet::ModelParams& params, const dataset::Cohort& cohort, double threshold) {
  Predictions out;
  out.probabilities.reserve(cohort.size());
  out.labels.reserve(cohort.size());
  const auto inputs = Inputs(cohort);
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const std::size_t end = std::min(inputs.size(), start + kChunk);
    const nnet::BatchInput chunk(inputs.begin() + std::ptrdiff_t(start), inputs.begin() + std::ptrdiff_t(end));
    const nnet::ForwardTrace tr = nnet::Forward(params, chunk);
    for (Eigen::Index s = 0; s < tr.outputs.cols(); ++s) {
      const double p = tr.outputs(0, s);
      out.probabilities.push_back(p);
      out.labels.push_back(p >= threshold ? 1 : 0);
    }
  }
  return out;
}

Predictions FinalPredict(const std::filesystem::path& checkpoint, const dataset::Cohort& cohort,
                         double threshold) {
  return FinalPredict(nnet::LoadCheckpoint(checkpoint), cohort, threshold);
}

const Checkpoint& MitigationResult::Selected() const {
  for (const auto& ck : checkpoints.checkpoints) {
    if (ck.epoch == selection.chosen_epoch) return ck;
  }
  throw Error(ErrorCode::kNoCheckpoints, "selected epoch has no checkpoint");
}

MitigationResult RunMitigation(const dataset::Cohort& train, const dataset::Cohort& eval,
                               const std::string& attribute, const TrainConfig& config,
                               const std::filesystem::path& checkpoint_dir) {
  MitigationResult result;
  result.checkpoints = TrainMtlWithCheckpoints(train, attribute, config, checkpoint_dir);
  if (result.checkpoints.checkpoints.empty()) {
    throw Error(ErrorCode::kNoCheckpoints, "training produced no checkpoints (epochs = 0?)");
  }
  const auto records = EvaluateUncertainties(result.checkpoints.checkpoints, eval, config);
  result.selection = SelectCheckpoint(records);
  return result;
}

nlohmann::ordered_json RecordsJson(std::span<const UncertaintyRecord> records) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json e;
    e["epoch"] = r.epoch;
    e["c_anxiety"] = r.c_anxiety;
    e["c_protected"] = r.c_protected;
    e["gap"] = r.gap();
    e["p_anxiety"] = r.p_anxiety;
    e["p_protected"] = r.p_protected;
    e["passes"] = r.passes;
    j.push_back(e);
  }
  return j;
}

nlohmann::ordered_json SelectionJson(const SelectionResult& selection) {
  nlohmann::ordered_json j;
  j["chosen_epoch"] = selection.chosen_epoch;
  j["gap"] = selection.gap;
  return j;
}

nlohmann::ordered_json ConfigJson(const TrainConfig& config) {
  nlohmann::ordered_json j;
  j["epochs"] = config.epochs;
  j["checkpoint_every"] = config.checkpoint_every;
  j["task_weights"] = config.task_weights;
  j["mc_passes"] = config.mc_passes;
  j["keep_rate"] = config.keep_rate;
  j["lr"] = config.lr;
  j["batch_size"] = config.batch_size;
  j["seed"] = config.seed;
  j["lstm_hidden"] = config.lstm_hidden;
  j["dense_units"] = config.dense_units;
  return j;
}

}  // namespace fairmtl::mitigation
