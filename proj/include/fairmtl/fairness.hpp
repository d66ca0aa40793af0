#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairmtl/dataset.hpp"

namespace fairmtl::fairness {

inline constexpr int kPrivileged = 1;
inline constexpr int kUnprivileged = 0;
inline constexpr double kLowerBound = 0.8;
inline constexpr double kUpperBound = 1.2;

// counts[group][outcome][label]
struct GroupOutcomes {
  std::array<std::array<std::array<std::size_t, 2>, 2>, 2> counts{};

  std::size_t GroupSize(int group) const;
  std::size_t Positives(int group) const;      // outcome == 1
  std::size_t LabelCount(int group, int label) const;
};

GroupOutcomes Tally(std::span<const int> outcomes, std::span<const int> labels, std::span<const int> groups);

// Pr(Y=1 | D=0) / Pr(Y=1 | D=1).
double DisparateImpact(std::span<const int> outcomes, std::span<const int> groups);

enum class SignConvention { kUnprivilegedMinusPrivileged, kPrivilegedMinusUnprivileged };

struct OddsDiffs {
  double diff_fn = 0.0;
  double diff_fp = 0.0;
};

OddsDiffs EqualizedOddsDiffs(std::span<const int> predictions, std::span<const int> labels,
                             std::span<const int> groups,
                             SignConvention sign = SignConvention::kUnprivilegedMinusPrivileged);

// weight[group][label] = P(group) P(label) / P(group, label).
struct CellWeights {
  std::array<std::array<double, 2>, 2> weight{};
  double operator()(int group, int label) const { return weight[group][label]; }
};

CellWeights ReweighWeights(std::span<const int> labels, std::span<const int> groups);
std::vector<double> SampleWeights(const CellWeights& cells, std::span<const int> labels,
                                  std::span<const int> groups);

// Disparate impact of labels under per-sample weights.
double WeightedDisparateImpact(std::span<const int> outcomes, std::span<const int> groups,
                               std::span<const double> weights);

bool InBounds(double dir);

struct FairnessReport {
  std::string attribute;
  std::size_t n_privileged = 0;
  std::size_t n_unprivileged = 0;
  double dir = 0.0;
  std::optional<double> diff_fn;
  std::optional<double> diff_fp;
  bool in_bounds = false;
  std::optional<double> accuracy;
  std::optional<double> f1;
  // Binary entropy (bits) of the positive-prediction rate; near 0 flags
  // near-constant predictions.
  std::optional<double> prediction_entropy;
};

// Dataset-level audit: true labels play the outcome role.
FairnessReport AuditCohort(const dataset::Cohort& cohort, const std::string& attribute);

// Model-level audit of predictions against true labels.
FairnessReport AuditPredictions(std::span<const int> predictions, std::span<const int> labels,
                                std::span<const int> groups, const std::string& attribute,
                                SignConvention sign = SignConvention::kUnprivilegedMinusPrivileged);

double Accuracy(std::span<const int> predictions, std::span<const int> labels);
double F1Score(std::span<const int> predictions, std::span<const int> labels);
double PredictionEntropy(std::span<const int> predictions);

nlohmann::ordered_json ToJson(const FairnessReport& report);

}  // namespace fairmtl::fairness
