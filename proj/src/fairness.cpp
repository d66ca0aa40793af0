#include "fairmtl/fairness.hpp"

#include <cmath>

#include "fairmtl/error.hpp"

namespace fairmtl::fairness {
namespace {

void RequireAligned(std::size_t a, std::size_t b) {
  if (a != b) throw Error(ErrorCode::kInvalidInput, "sequences are not aligned");
}

int Binary(int v, const char* what) {
  if (v != 0 && v != 1) throw Error(ErrorCode::kInvalidInput, std::string(what) + " values must be 0 or 1");
  return v;
}

}  // namespace

std::size_t GroupOutcomes::GroupSize(int group) const {
  const auto& g = counts[group];
  return g[0][0] + g[0][1] + g[1][0] + g[1][1];
}

std::size_t GroupOutcomes::Positives(int group) const {
  return counts[group][1][0] + counts[group][1][1];
}

std::size_t GroupOutcomes::LabelCount(int group, int label) const {
  return counts[group][0][label] + counts[group][1][label];
}

GroupOutcomes Tally(std::span<const int> outcomes, std::span<const int> labels, std::span<const int> groups) {
  RequireAligned(outcomes.size(), groups.size());
  if (!labels.empty()) RequireAligned(labels.size(), groups.size());
  GroupOutcomes t;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const int y = labels.empty() ? 0 : Binary(labels[i], "label");
    ++t.counts[Binary(groups[i], "group")][Binary(outcomes[i], "outcome")][y];
  }
  return t;
}

double DisparateImpact(std::span<const int> outcomes, std::span<const int> groups) {
  const GroupOutcomes t = Tally(outcomes, {}, groups);
  const std::size_t n0 = t.GroupSize(kUnprivileged);
  const std::size_t n1 = t.GroupSize(kPrivileged);
  if (n0 == 0 || n1 == 0) throw Error(ErrorCode::kEmptyGroup, "both groups must be non-empty");
  if (t.Positives(kPrivileged) == 0) {
    throw Error(ErrorCode::kUndefinedRatio, "privileged group has no positive outcomes");
  }
  const double rate0 = static_cast<double>(t.Positives(kUnprivileged)) / static_cast<double>(n0);
  const double rate1 = static_cast<double>(t.Positives(kPrivileged)) / static_cast<double>(n1);
  return rate0 / rate1;
}

OddsDiffs EqualizedOddsDiffs(std::span<const int> predictions, std::span<const int> labels,
                             std::span<const int> groups, SignConvention sign) {
  RequireAligned(labels.size(), groups.size());
  const GroupOutcomes t = Tally(predictions, labels, groups);
  double fnr[2], fpr[2];
  for (int g = 0; g < 2; ++g) {
    const std::size_t pos = t.LabelCount(g, 1);
    const std::size_t neg = t.LabelCount(g, 0);
    if (pos == 0 || neg == 0) {
      throw Error(ErrorCode::kMissingOutcomeClass,
                  std::string(g == kPrivileged ? "privileged" : "unprivileged") +
                      " group lacks " + (pos == 0 ? "positive" : "negative") + " true labels");
    }
    fnr[g] = static_cast<double>(t.counts[g][0][1]) / static_cast<double>(pos);
    fpr[g] = static_cast<double>(t.counts[g][1][0]) / static_cast<double>(neg);
  }
  OddsDiffs d{fnr[kUnprivileged] - fnr[kPrivileged], fpr[kUnprivileged] - fpr[kPrivileged]};
  if (sign == SignConvention::kPrivilegedMinusUnprivileged) {
    d.diff_fn = -d.diff_fn;
    d.diff_fp = -d.diff_fp;
  }
  return d;
}

CellWeights ReweighWeights(std::span<const int> labels, std::span<const int> groups) {
  const GroupOutcomes t = Tally(labels, {}, groups);
  const double n = static_cast<double>(groups.size());
  CellWeights w;
  for (int g = 0; g < 2; ++g) {
    for (int y = 0; y < 2; ++y) {
      const std::size_t cell = t.counts[g][y][0];
      if (cell == 0) {
        throw Error(ErrorCode::kEmptyCell, "cell (group=" + std::to_string(g) + ", label=" +
                                               std::to_string(y) + ") is empty");
      }
      const double p_group = static_cast<double>(t.GroupSize(g)) / n;
      const double p_label =
          static_cast<double>(t.counts[0][y][0] + t.counts[1][y][0]) / n;
      w.weight[g][y] = p_group * p_label / (static_cast<double>(cell) / n);
    }
  }
  return w;
}

std::vector<double> SampleWeights(const CellWeights& cells, std::span<const int> labels,
                                  std::span<const int> groups) {
  RequireAligned(labels.size(), groups.size());
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = cells(groups[i], labels[i]);
  return out;
}

double WeightedDisparateImpact(std::span<const int> outcomes, std::span<const int> groups,
                               std::span<const double> weights) {
  RequireAligned(outcomes.size(), groups.size());
  RequireAligned(weights.size(), groups.size());
  double mass[2] = {0, 0}, positive[2] = {0, 0};
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const int g = Binary(groups[i], "group");
    mass[g] += weights[i];
    if (Binary(outcomes[i], "outcome") == 1) positive[g] += weights[i];
  }
  if (mass[0] <= 0.0 || mass[1] <= 0.0) throw Error(ErrorCode::kEmptyGroup, "both groups must carry weight");
  if (positive[kPrivileged] <= 0.0) {
    throw Error(ErrorCode::kUndefinedRatio, "privileged group has no positive outcomes");
  }
  return (positive[0] / mass[0]) / (positive[1] / mass[1]);
}

bool InBounds(double dir) { return dir >= kLowerBound && dir <= kUpperBound; }

FairnessReport AuditCohort(const dataset::Cohort& cohort, const std::string& attribute) {
  const auto labels = dataset::Labels(cohort);
  const auto groups = dataset::Groups(cohort, attribute);
  FairnessReport r;
  r.attribute = attribute;
  const GroupOutcomes t = Tally(labels, {}, groups);
  r.n_privileged = t.GroupSize(kPrivileged);
  r.n_unprivileged = t.GroupSize(kUnprivileged);
  r.dir = DisparateImpact(labels, groups);
  r.in_bounds = InBounds(r.dir);
  return r;
}

FairnessReport AuditPredictions(std::span<const int> predictions, std::span<const int> labels,
                                std::span<const int> groups, const std::string& attribute,
                                SignConvention sign) {
  FairnessReport r;
  r.attribute = attribute;
  const GroupOutcomes t = Tally(predictions, labels, groups);
  r.n_privileged = t.GroupSize(kPrivileged);
  r.n_unprivileged = t.GroupSize(kUnprivileged);
  r.dir = DisparateImpact(predictions, groups);
  r.in_bounds = InBounds(r.dir);
  const OddsDiffs d = EqualizedOddsDiffs(predictions, labels, groups, sign);
  r.diff_fn = d.diff_fn;
  r.diff_fp = d.diff_fp;
  r.accuracy = Accuracy(predictions, labels);
  r.f1 = F1Score(predictions, labels);
  r.prediction_entropy = PredictionEntropy(predictions);
  return r;
}

double Accuracy(std::span<const int> predictions, std::span<const int> labels) {
  RequireAligned(predictions.size(), labels.size());
  if (labels.empty()) throw Error(ErrorCode::kEmptyCohort, "no predictions to score");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double F1Score(std::span<const int> predictions, std::span<const int> labels) {
  RequireAligned(predictions.size(), labels.size());
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] == 1 && labels[i] == 1) ++tp;
    if (predictions[i] == 1 && labels[i] == 0) ++fp;
    if (predictions[i] == 0 && labels[i] == 1) ++fn;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double PredictionEntropy(std::span<const int> predictions) {
  if (predictions.empty()) return 0.0;
  std::size_t pos = 0;
  for (int p : predictions) pos += p == 1 ? 1 : 0;
  const double q = static_cast<double>(pos) / static_cast<double>(predictions.size());
  if (q <= 0.0 || q >= 1.0) return 0.0;
  return -(q * std::log2(q) + (1.0 - q) * std::log2(1.0 - q));
}

nlohmann::ordered_json ToJson(const FairnessReport& report) {
  using nlohmann::ordered_json;
  const auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  j["attribute"] = report.attribute;
  j["n_privileged"] = report.n_privileged;
  j["n_unprivileged"] = report.n_unprivileged;
  j["dir"] = report.dir;
  j["diff_fn"] = opt(report.diff_fn);
  j["diff_fp"] = opt(report.diff_fp);
  j["in_bounds"] = report.in_bounds;
  j["bounds"] = {kLowerBound, kUpperBound};
  j["accuracy"] = opt(report.accuracy);
  j["f1"] = opt(report.f1);
  if (report.prediction_entropy) j["prediction_entropy"] = *report.prediction_entropy;
  return j;
}

}  // namespace fairmtl::fairness
