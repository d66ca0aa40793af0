#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairmtl/dataset.hpp"
#include "fairmtl/nnet.hpp"

// Checkpointed multi-task training, Monte-Carlo-dropout uncertainty scoring
// of the checkpoints, and selection of the weights to predict with.
namespace fairmtl::mitigation {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t checkpoint_every = 5;
  std::array<double, 2> task_weights = {4.5, 0.5};  // anxiety, protected
  std::size_t mc_passes = 50;
  double keep_rate = 0.8;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  std::size_t lstm_hidden = 64;
  std::size_t dense_units = 32;

  // Throws kInvalidInput when an invariant is violated.
  void Validate() const;
  nnet::Architecture Architecture(std::size_t heads) const;
};

struct TrainResult {
  nnet::ModelParams params;
  std::vector<double> epoch_losses;  // mean training loss per epoch
};

TrainResult TrainBaseline(const dataset::Cohort& train, const TrainConfig& config);

// Same as TrainBaseline with each sample's loss term scaled by its weight.
TrainResult TrainReweighted(const dataset::Cohort& train, const TrainConfig& config,
                            std::span<const double> sample_weights);

struct Checkpoint {
  std::uint32_t epoch = 0;
  nnet::ModelParams params;
  std::filesystem::path path;  // empty when not written
};

struct CheckpointSet {
  std::vector<Checkpoint> checkpoints;
  std::vector<double> epoch_losses;
  std::vector<std::array<double, 2>> epoch_task_losses;  // unweighted anxiety, protected
};

std::string CheckpointFileName(std::uint32_t epoch);

// Two-head training; a checkpoint is kept after every `checkpoint_every`
// epochs and written to `dir` (as ckpt_epoch_{N}.bin) when it is non-empty.
CheckpointSet TrainMtlWithCheckpoints(const dataset::Cohort& train, const std::string& attribute,
                                      const TrainConfig& config, const std::filesystem::path& dir = {});

struct UncertaintyRecord {
  std::uint32_t epoch = 0;
  double c_anxiety = 0.0;
  double c_protected = 0.0;
  double p_anxiety = 0.0;
  double p_protected = 0.0;
  std::size_t passes = 0;

  double gap() const { return c_protected - c_anxiety; }
};

// Arithmetic mean over samples of the per-sample MC estimates.
UncertaintyRecord PoolEstimates(std::uint32_t epoch, std::span<const nnet::McEstimate> per_sample,
                                std::size_t passes);

// Per-sample Monte-Carlo estimates for one parameter set. Sample i draws its
// masks from the stream (seed, "mc", epoch, i), so results do not depend on
// how samples are batched.
std::vector<nnet::McEstimate> McEstimates(const nnet::ModelParams& params, const dataset::Cohort& cohort,
                                          std::size_t passes, double keep_rate, std::uint64_t seed);

std::vector<UncertaintyRecord> EvaluateUncertainties(std::span<const Checkpoint> checkpoints,
                                                     const dataset::Cohort& eval, const TrainConfig& config);

struct SelectionResult {
  std::uint32_t chosen_epoch = 0;
  double gap = 0.0;
  std::vector<UncertaintyRecord> records;
};

// argmax of c_protected - c_anxiety; ties go to the earliest epoch.
SelectionResult SelectCheckpoint(std::span<const UncertaintyRecord> records);

struct Predictions {
  std::vector<double> probabilities;
  std::vector<int> labels;
};

// Deterministic pass through the trunk and the anxiety head (head 0).
Predictions FinalPredict(const nnet::ModelParams& params, const dataset::Cohort& cohort,
                         double threshold = 0.5);
Predictions FinalPredict(const std::filesystem::path& checkpoint, const dataset::Cohort& cohort,
                         double threshold = 0.5);

struct MitigationResult {
  CheckpointSet checkpoints;
  SelectionResult selection;
  const Checkpoint& Selected() const;
};

// Full pipeline on an already split and standardized cohort. `eval` is the
// cohort the uncertainties are scored on.
MitigationResult RunMitigation(const dataset::Cohort& train, const dataset::Cohort& eval,
                               const std::string& attribute, const TrainConfig& config,
                               const std::filesystem::path& checkpoint_dir = {});

nlohmann::ordered_json RecordsJson(std::span<const UncertaintyRecord> records);
nlohmann::ordered_json SelectionJson(const SelectionResult& selection);
nlohmann::ordered_json ConfigJson(const TrainConfig& config);

}  // namespace fairmtl::mitigation
