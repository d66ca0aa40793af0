#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fairmtl/hrv.hpp"

namespace fairmtl::dataset {

inline constexpr std::size_t kSteps = 24;
inline constexpr std::size_t kFeatures = hrv::kNumFeatures;
inline constexpr std::size_t kWindowSize = kSteps * kFeatures;

// Row-major kSteps x kFeatures matrix.
using WindowMatrix = std::array<double, kWindowSize>;

struct LabeledWindow {
  std::string sample_id;
  std::string participant_id;
  WindowMatrix features{};
  int anxiety = 0;
  std::map<std::string, int> protected_attrs;

  double at(std::size_t step, std::size_t feature) const { return features[step * kFeatures + feature]; }
  double& at(std::size_t step, std::size_t feature) { return features[step * kFeatures + feature]; }

  bool operator==(const LabeledWindow&) const = default;
};

struct AttributeCatalog {
  // raw category -> {0, 1}
  std::map<std::string, int> codes;
  // raw category -> number of participants
  std::map<std::string, std::size_t> counts;
  bool tie = false;

  bool operator==(const AttributeCatalog&) const = default;
};

struct Cohort {
  std::vector<LabeledWindow> windows;
  std::map<std::string, AttributeCatalog> catalog;

  std::size_t size() const { return windows.size(); }
  bool empty() const { return windows.empty(); }
  bool operator==(const Cohort&) const = default;
};

struct SplitCohort {
  Cohort train;
  Cohort test;
  std::uint64_t seed = 0;
};

struct BinarizedLabels {
  std::vector<int> labels;
  bool degenerate = false;
};

// Label 1 iff the score is strictly above that participant's own mean.
std::map<std::string, BinarizedLabels> BinarizeAnxiety(
    const std::map<std::string, std::vector<double>>& scores_per_participant);

struct EncodedAttribute {
  std::map<std::string, int> per_participant;
  AttributeCatalog catalog;
};

// Majority category (by participant count) becomes the privileged class 1.
// Ties go to the lexicographically smaller category and set catalog.tie.
EncodedAttribute EncodeProtected(const std::map<std::string, std::string>& raw,
                                 const std::string& attribute_name);

// Shuffled 75/25 split. With by_participant the shuffle runs over
// participants, and train takes whole participants until it reaches
// round(0.75 * n) windows.
SplitCohort SplitCohortByWindow(const Cohort& cohort, std::uint64_t seed);
SplitCohort SplitCohortByParticipant(const Cohort& cohort, std::uint64_t seed);

struct FeatureStats {
  std::array<double, kFeatures> mean{};
  std::array<double, kFeatures> std{};
};

inline constexpr double kStdFloor = 1e-8;

// Per-feature statistics pooled over all steps of all windows.
FeatureStats ComputeStats(const Cohort& cohort);
void ApplyStats(Cohort& cohort, const FeatureStats& stats);
SplitCohort Standardize(const SplitCohort& split, FeatureStats* stats_out = nullptr);

struct SyntheticOptions {
  std::string attribute = "group";
  // Per-cell noise sd and AR(1) coefficient along the time axis.
  double noise_sd = 1.0;
  double ar_coefficient = 0.5;
  // Mean shift on the label-informative columns for anxiety = 1.
  double label_shift = 0.30;
  // Shift (times bias_strength) on the planted protected-correlated columns.
  double group_shift = 1.5;
  // Positive rate of the privileged group; the unprivileged rate is
  // base_rate * (1 - label_skew * bias_strength).
  double base_rate = 0.5;
  double label_skew = 0.6;
  double privileged_fraction = 0.6;
  std::size_t windows_per_participant = 20;
};

// Columns that carry the planted group signal.
inline constexpr std::array<std::size_t, 3> kPlantedColumns = {hrv::kSdsd, hrv::kNni20, hrv::kPnni20};
// Columns that carry the anxiety signal.
inline constexpr std::array<std::size_t, 6> kLabelColumns = {hrv::kMeanNni, hrv::kRmssd, hrv::kLf,
                                                             hrv::kHf, hrv::kMeanHr, hrv::kCsi};

Cohort GenerateSynthetic(std::size_t n, double bias_strength, std::uint64_t seed,
                         const SyntheticOptions& options = {});

std::vector<int> Labels(const Cohort& cohort);
std::vector<int> Groups(const Cohort& cohort, const std::string& attribute);

// Files and formats.
struct CohortFiles {
  std::filesystem::path windows;
  std::filesystem::path labels;
  std::filesystem::path demographics;
};

struct LoadOptions {
  // Labels file holds raw scores that need per-participant binarization.
  bool binarize = false;
};

Cohort LoadCohort(const CohortFiles& files, const LoadOptions& options = {});
void WriteCohort(const Cohort& cohort, const CohortFiles& files,
                 const std::map<std::string, std::map<std::string, std::string>>& raw_demographics);
std::string CatalogJson(const std::map<std::string, AttributeCatalog>& catalog);

// Raw demographic categories used by the synthetic generator's files.
std::map<std::string, std::map<std::string, std::string>> SyntheticDemographics(const Cohort& cohort);

}  // namespace fairmtl::dataset
