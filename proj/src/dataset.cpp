#include "fairmtl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fairmtl/error.hpp"
#include "fairmtl/io.hpp"
#include "fairmtl/rng.hpp"

namespace fairmtl::dataset {

std::map<std::string, BinarizedLabels> BinarizeAnxiety(
    const std::map<std::string, std::vector<double>>& scores_per_participant) {
  std::map<std::string, BinarizedLabels> out;
  for (const auto& [participant, scores] : scores_per_participant) {
    if (scores.empty()) {
      throw Error(ErrorCode::kInvalidInput, "participant " + participant + " has no scores");
    }
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) /
                        static_cast<double>(scores.size());
    BinarizedLabels result;
    result.degenerate = std::all_of(scores.begin(), scores.end(),
                                    [&](double s) { return s == scores.front(); });
    result.labels.reserve(scores.size());
    for (double s : scores) result.labels.push_back(!result.degenerate && s > mean ? 1 : 0);
    out.emplace(participant, std::move(result));
  }
  return out;
}

EncodedAttribute EncodeProtected(const std::map<std::string, std::string>& raw,
                                 const std::string& attribute_name) {
  EncodedAttribute out;
  for (const auto& [participant, category] : raw) ++out.catalog.counts[category];
  if (out.catalog.counts.size() < 2) {
    throw Error(ErrorCode::kDegenerateGroup,
                attribute_name + " has a single category; cannot form two groups");
  }
  if (out.catalog.counts.size() > 2) {
    throw Error(ErrorCode::kNotBinary, attribute_name + " has " +
                                           std::to_string(out.catalog.counts.size()) +
                                           " categories; coarsen to two first");
  }
  // std::map iterates in lexicographic order, so on a tie `first` wins.
  const auto& first = *out.catalog.counts.begin();
  const auto& second = *std::next(out.catalog.counts.begin());
  const bool first_privileged = first.second >= second.second;
  out.catalog.tie = first.second == second.second;
  out.catalog.codes[first.first] = first_privileged ? 1 : 0;
  out.catalog.codes[second.first] = first_privileged ? 0 : 1;
  for (const auto& [participant, category] : raw) {
    out.per_participant[participant] = out.catalog.codes.at(category);
  }
  return out;
}

namespace {

std::size_t TrainSize(std::size_t n) {
  return static_cast<std::size_t>(std::llround(0.75 * static_cast<double>(n)));
}

void RequireSplittable(const Cohort& cohort) {
  if (cohort.size() < 4) {
    throw Error(ErrorCode::kTooSmall, "need at least 4 windows to split, got " +
                                          std::to_string(cohort.size()));
  }
}

}  // namespace

SplitCohort SplitCohortByWindow(const Cohort& cohort, std::uint64_t seed) {
  RequireSplittable(cohort);
  std::vector<std::size_t> order(cohort.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = MakeRng(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);
  SplitCohort split;
  split.seed = seed;
  split.train.catalog = cohort.catalog;
  split.test.catalog = cohort.catalog;
  const std::size_t n_train = TrainSize(cohort.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? split.train : split.test).windows.push_back(cohort.windows[order[i]]);
  }
  return split;
}

SplitCohort SplitCohortByParticipant(const Cohort& cohort, std::uint64_t seed) {
  RequireSplittable(cohort);
  std::map<std::string, std::vector<std::size_t>> by_participant;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    by_participant[cohort.windows[i].participant_id].push_back(i);
  }
  std::vector<std::string> participants;
  for (const auto& [id, idx] : by_participant) participants.push_back(id);
  Rng rng = MakeRng(seed, "split-participant");
  std::shuffle(participants.begin(), participants.end(), rng);

  SplitCohort split;
  split.seed = seed;
  split.train.catalog = cohort.catalog;
  split.test.catalog = cohort.catalog;
  const std::size_t n_train = TrainSize(cohort.size());
  for (const auto& id : participants) {
    Cohort& dest = split.train.size() < n_train ? split.train : split.test;
    for (std::size_t i : by_participant[id]) dest.windows.push_back(cohort.windows[i]);
  }
  return split;
}

FeatureStats ComputeStats(const Cohort& cohort) {
  if (cohort.empty()) throw Error(ErrorCode::kEmptyCohort, "cannot standardize an empty cohort");
  FeatureStats stats;
  const double count = static_cast<double>(cohort.size() * kSteps);
  for (const auto& w : cohort.windows) {
    for (std::size_t s = 0; s < kSteps; ++s) {
      for (std::size_t f = 0; f < kFeatures; ++f) stats.mean[f] += w.at(s, f);
    }
  }
  for (double& m : stats.mean) m /= count;
  for (const auto& w : cohort.windows) {
    for (std::size_t s = 0; s < kSteps; ++s) {
      for (std::size_t f = 0; f < kFeatures; ++f) {
        const double d = w.at(s, f) - stats.mean[f];
        stats.std[f] += d * d;
      }
    }
  }
  for (double& sd : stats.std) sd = std::sqrt(sd / count);
  return stats;
}

void ApplyStats(Cohort& cohort, const FeatureStats& stats) {
  for (auto& w : cohort.windows) {
    for (std::size_t s = 0; s < kSteps; ++s) {
      for (std::size_t f = 0; f < kFeatures; ++f) {
        double& v = w.at(s, f);
        v = stats.std[f] <= kStdFloor ? 0.0 : (v - stats.mean[f]) / stats.std[f];
      }
    }
  }
}

SplitCohort Standardize(const SplitCohort& split, FeatureStats* stats_out) {
  const FeatureStats stats = ComputeStats(split.train);
  SplitCohort out = split;
  ApplyStats(out.train, stats);
  ApplyStats(out.test, stats);
  if (stats_out != nullptr) *stats_out = stats;
  return out;
}

Cohort GenerateSynthetic(std::size_t n, double bias_strength, std::uint64_t seed,
                         const SyntheticOptions& options) {
  if (!(bias_strength >= 0.0 && bias_strength <= 1.0)) {
    throw Error(ErrorCode::kBadStrength, "bias_strength must lie in [0, 1]");
  }
  if (n < 40) throw Error(ErrorCode::kTooSmall, "synthetic cohorts need n >= 40");

  const std::size_t per = std::max<std::size_t>(1, options.windows_per_participant);
  const std::size_t n_participants = (n + per - 1) / per;
  const auto n_privileged = static_cast<std::size_t>(
      std::ceil(std::max(0.5, options.privileged_fraction) * static_cast<double>(n_participants)));

  Rng group_rng = MakeRng(seed, "synthetic-groups");
  std::vector<int> participant_group(n_participants, 0);
  std::fill_n(participant_group.begin(), std::min(n_privileged, n_participants), 1);
  std::shuffle(participant_group.begin(), participant_group.end(), group_rng);
  if (std::count(participant_group.begin(), participant_group.end(), 0) == 0) {
    participant_group.back() = 0;
  }

  Cohort cohort;
  cohort.windows.resize(n);
  std::vector<std::size_t> members[2];
  for (std::size_t i = 0; i < n; ++i) {
    auto& w = cohort.windows[i];
    const std::size_t p = i / per;
    w.sample_id = "s" + std::to_string(i);
    w.participant_id = "p" + std::to_string(p);
    const int g = participant_group[p];
    w.protected_attrs[options.attribute] = g;
    members[g].push_back(i);
  }

  // Labels are assigned by exact per-group quota so the planted positive
  // rates hold up to rounding.
  Rng label_rng = MakeRng(seed, "synthetic-labels");
  const double rate[2] = {options.base_rate * (1.0 - options.label_skew * bias_strength), options.base_rate};
  for (int g = 0; g < 2; ++g) {
    auto idx = members[g];
    std::shuffle(idx.begin(), idx.end(), label_rng);
    const auto positives = static_cast<std::size_t>(
        std::llround(rate[g] * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      cohort.windows[idx[k]].anxiety = k < positives ? 1 : 0;
    }
  }

  Rng noise_rng = MakeRng(seed, "synthetic-features");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double a = options.ar_coefficient;
  const double innovation = std::sqrt(1.0 - a * a);
  for (auto& w : cohort.windows) {
    for (std::size_t f = 0; f < kFeatures; ++f) {
      double e = normal(noise_rng);
      for (std::size_t s = 0; s < kSteps; ++s) {
        if (s > 0) e = a * e + innovation * normal(noise_rng);
        w.at(s, f) = options.noise_sd * e;
      }
    }
    const double group_offset =
        options.group_shift * bias_strength * static_cast<double>(w.protected_attrs[options.attribute]);
    const double label_offset = options.label_shift * static_cast<double>(w.anxiety);
    for (std::size_t s = 0; s < kSteps; ++s) {
      for (std::size_t f : kPlantedColumns) w.at(s, f) += group_offset;
      for (std::size_t f : kLabelColumns) w.at(s, f) += label_offset;
    }
  }

  AttributeCatalog entry;
  const auto n_priv = static_cast<std::size_t>(
      std::count(participant_group.begin(), participant_group.end(), 1));
  entry.codes = {{"A", 1}, {"B", 0}};
  entry.counts = {{"A", n_priv}, {"B", n_participants - n_priv}};
  entry.tie = n_priv == n_participants - n_priv;
  cohort.catalog[options.attribute] = entry;
  return cohort;
}

std::vector<int> Labels(const Cohort& cohort) {
  std::vector<int> out;
  out.reserve(cohort.size());
  for (const auto& w : cohort.windows) out.push_back(w.anxiety);
  return out;
}

std::vector<int> Groups(const Cohort& cohort, const std::string& attribute) {
  std::vector<int> out;
  out.reserve(cohort.size());
  for (const auto& w : cohort.windows) {
    const auto it = w.protected_attrs.find(attribute);
    if (it == w.protected_attrs.end()) {
      throw Error(ErrorCode::kMissingAttribute, "window " + w.sample_id + " lacks attribute " + attribute);
    }
    out.push_back(it->second);
  }
  return out;
}

Cohort LoadCohort(const CohortFiles& files, const LoadOptions& options) {
  const auto windows_csv = io::ReadCsv(files.windows);
  const auto labels_csv = io::ReadCsv(files.labels);
  const auto demo_csv = io::ReadCsv(files.demographics);

  const std::size_t c_sample = windows_csv.Column("sample_id");
  const std::size_t c_participant = windows_csv.Column("participant_id");
  const std::size_t c_step = windows_csv.Column("step");
  std::array<std::size_t, kFeatures> c_feature{};
  for (std::size_t f = 0; f < kFeatures; ++f) c_feature[f] = windows_csv.Column(hrv::kFeatureNames[f]);

  Cohort cohort;
  std::map<std::string, std::size_t> index_of;
  std::vector<std::set<long long>> steps_seen;
  for (const auto& row : windows_csv.rows) {
    const std::string& id = row[c_sample];
    auto [it, inserted] = index_of.emplace(id, cohort.windows.size());
    if (inserted) {
      cohort.windows.emplace_back();
      cohort.windows.back().sample_id = id;
      cohort.windows.back().participant_id = row[c_participant];
      steps_seen.emplace_back();
    }
    auto& w = cohort.windows[it->second];
    if (w.participant_id != row[c_participant]) {
      throw Error(ErrorCode::kInvalidInput, files.windows.string() + ": sample " + id +
                                                " spans several participants");
    }
    const long long step = io::ParseInt(row[c_step]);
    if (step < 0 || step >= static_cast<long long>(kSteps) || !steps_seen[it->second].insert(step).second) {
      throw Error(ErrorCode::kInvalidInput, files.windows.string() + ": sample " + id +
                                                " has bad or repeated step " + row[c_step]);
    }
    for (std::size_t f = 0; f < kFeatures; ++f) {
      w.at(static_cast<std::size_t>(step), f) = io::ParseDouble(row[c_feature[f]]);
    }
  }
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (steps_seen[i].size() != kSteps) {
      throw Error(ErrorCode::kInvalidInput, files.windows.string() + ": sample " +
                                                cohort.windows[i].sample_id + " has " +
                                                std::to_string(steps_seen[i].size()) + " of 24 steps");
    }
  }

  const std::size_t l_sample = labels_csv.Column("sample_id");
  const std::size_t l_value = labels_csv.Column("anxiety");
  std::map<std::string, double> raw_label;
  for (const auto& row : labels_csv.rows) raw_label[row[l_sample]] = io::ParseDouble(row[l_value]);
  for (const auto& w : cohort.windows) {
    if (!raw_label.contains(w.sample_id)) {
      throw Error(ErrorCode::kInvalidInput, files.labels.string() + ": no label for sample " + w.sample_id);
    }
  }
  if (options.binarize) {
    std::map<std::string, std::vector<double>> scores;
    for (const auto& w : cohort.windows) scores[w.participant_id].push_back(raw_label[w.sample_id]);
    const auto binary = BinarizeAnxiety(scores);
    std::map<std::string, std::size_t> cursor;
    for (auto& w : cohort.windows) {
      w.anxiety = binary.at(w.participant_id).labels[cursor[w.participant_id]++];
    }
  } else {
    for (auto& w : cohort.windows) {
      const double v = raw_label[w.sample_id];
      if (v != 0.0 && v != 1.0) {
        throw Error(ErrorCode::kInvalidInput, files.labels.string() + ": label for " + w.sample_id +
                                                  " is not 0/1 (use --binarize for raw scores)");
      }
      w.anxiety = static_cast<int>(v);
    }
  }

  const std::size_t d_participant = demo_csv.Column("participant_id");
  std::set<std::string> in_windows;
  for (const auto& w : cohort.windows) in_windows.insert(w.participant_id);
  for (std::size_t c = 0; c < demo_csv.header.size(); ++c) {
    if (c == d_participant) continue;
    const std::string& attribute = demo_csv.header[c];
    std::map<std::string, std::string> raw;
    for (const auto& row : demo_csv.rows) {
      if (in_windows.contains(row[d_participant])) raw[row[d_participant]] = row[c];
    }
    const auto encoded = EncodeProtected(raw, attribute);
    cohort.catalog[attribute] = encoded.catalog;
    for (auto& w : cohort.windows) {
      const auto it = encoded.per_participant.find(w.participant_id);
      if (it == encoded.per_participant.end()) {
        throw Error(ErrorCode::kInvalidInput, files.demographics.string() + ": no row for participant " +
                                                  w.participant_id);
      }
      w.protected_attrs[attribute] = it->second;
    }
  }
  return cohort;
}

std::map<std::string, std::map<std::string, std::string>> SyntheticDemographics(const Cohort& cohort) {
  std::map<std::string, std::map<std::string, std::string>> out;
  for (const auto& w : cohort.windows) {
    for (const auto& [attribute, code] : w.protected_attrs) {
      std::string category;
      const auto cat = cohort.catalog.find(attribute);
      if (cat != cohort.catalog.end()) {
        for (const auto& [name, c] : cat->second.codes) {
          if (c == code) category = name;
        }
      }
      if (category.empty()) category = std::to_string(code);
      out[w.participant_id][attribute] = category;
    }
  }
  return out;
}

void WriteCohort(const Cohort& cohort, const CohortFiles& files,
                 const std::map<std::string, std::map<std::string, std::string>>& raw_demographics) {
  std::ostringstream windows;
  windows << "sample_id,participant_id,step";
  for (auto name : hrv::kFeatureNames) windows << ',' << name;
  windows << '\n';
  std::ostringstream labels;
  labels << "sample_id,anxiety\n";
  for (const auto& w : cohort.windows) {
    for (std::size_t s = 0; s < kSteps; ++s) {
      windows << w.sample_id << ',' << w.participant_id << ',' << s;
      for (std::size_t f = 0; f < kFeatures; ++f) windows << ',' << io::FormatDouble(w.at(s, f));
      windows << '\n';
    }
    labels << w.sample_id << ',' << w.anxiety << '\n';
  }

  std::set<std::string> attributes;
  for (const auto& [participant, attrs] : raw_demographics) {
    for (const auto& [attribute, value] : attrs) attributes.insert(attribute);
  }
  std::ostringstream demo;
  demo << "participant_id";
  for (const auto& a : attributes) demo << ',' << a;
  demo << '\n';
  for (const auto& [participant, attrs] : raw_demographics) {
    demo << participant;
    for (const auto& a : attributes) {
      const auto it = attrs.find(a);
      demo << ',' << (it == attrs.end() ? std::string() : it->second);
    }
    demo << '\n';
  }
  io::WriteFileAtomic(files.windows, windows.str());
  io::WriteFileAtomic(files.labels, labels.str());
  io::WriteFileAtomic(files.demographics, demo.str());
}

std::string CatalogJson(const std::map<std::string, AttributeCatalog>& catalog) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [attribute, entry] : catalog) {
    nlohmann::ordered_json e = nlohmann::ordered_json::object();
    for (const auto& [category, code] : entry.codes) e[category] = code;
    nlohmann::ordered_json counts = nlohmann::ordered_json::object();
    for (const auto& [category, count] : entry.counts) counts[category] = count;
    e["counts"] = counts;
    if (entry.tie) e["tie"] = true;
    j[attribute] = e;
  }
  return j.dump(2) + "\n";
}

}  // namespace fairmtl::dataset
