#include "fairmtl/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "fairmtl/dataset.hpp"
#include "fairmtl/error.hpp"
#include "fairmtl/fairness.hpp"
#include "fairmtl/hrv.hpp"
#include "fairmtl/io.hpp"
#include "fairmtl/mitigation.hpp"
#include "fairmtl/saliency.hpp"

namespace fairmtl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct RunConfig {
  std::string command;
  // Data
  std::string windows, labels, demo;
  bool binarize = false;
  std::string protected_attr;
  bool by_participant = false;
  double threshold = 0.5;
  // extract
  std::string ecg, nni;
  double window_sec = 0.0;
  // synth
  std::size_t n = 2000;
  double bias = 0.8;
  std::string attribute = "group";
  // saliency
  std::string model;
  std::size_t head = 0;
  std::string split_part = "test";
  // mitigate
  std::string eval_split = "train";
  mitigation::TrainConfig train;
  std::string out;

  ordered_json ToJson() const {
    ordered_json j;
    j["command"] = command;
    const auto put = [&j](const char* key, const std::string& v) {
      if (!v.empty()) j[key] = v;
    };
    put("windows", windows);
    put("labels", labels);
    put("demo", demo);
    put("ecg", ecg);
    put("nni", nni);
    put("model", model);
    put("protected", protected_attr);
    if (command == "extract") j["window_sec"] = window_sec;
    if (command == "synth") {
      j["n"] = n;
      j["bias"] = bias;
      j["attribute"] = attribute;
    }
    if (command != "extract" && command != "synth") {
      j["binarize"] = binarize;
      j["by_participant"] = by_participant;
      j["threshold"] = threshold;
    }
    if (command == "saliency") {
      j["head"] = head;
      j["split"] = split_part;
    }
    if (command == "mitigate" || command == "compare") j["eval_split"] = eval_split;
    j["seed"] = train.seed;
    if (command == "train-base" || command == "reweigh-train" || command == "mitigate" || command == "compare") {
      j["train"] = mitigation::ConfigJson(train);
    }
    return j;
  }
};

// Collects the artifacts of one run and writes config + manifest at the end.
class RunOutput {
 public:
  RunOutput(const RunConfig& config) : config_(config), dir_(config.out) { fs::create_directories(dir_); }

  void Write(const std::string& relative, const std::string& content) {
    io::WriteFileAtomic(dir_ / relative, content);
    artifacts_.emplace_back(relative, io::Sha256Hex(content));
  }

  void WriteJson(const std::string& relative, const ordered_json& j) { Write(relative, j.dump(2) + "\n"); }

  // Registers a file written by library code.
  void Register(const fs::path& path) {
    artifacts_.emplace_back(fs::relative(path, dir_).generic_string(), io::Sha256Hex(io::ReadFile(path)));
  }

  const fs::path& dir() const { return dir_; }

  void Finish() {
    const ordered_json cfg = config_.ToJson();
    io::WriteFileAtomic(dir_ / "config.json", cfg.dump(2) + "\n");
    ordered_json manifest;
    manifest["command"] = config_.command;
    manifest["seed"] = config_.train.seed;
    manifest["config"] = cfg;
    ordered_json list = ordered_json::array();
    for (const auto& [path, digest] : artifacts_) list.push_back({{"path", path}, {"sha256", digest}});
    manifest["artifacts"] = list;
    io::WriteFileAtomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  const RunConfig& config_;
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> artifacts_;
};

void RequireFlag(const std::string& value, const char* flag) {
  if (value.empty()) throw CLI::RequiredError(flag);
}

dataset::Cohort LoadData(const RunConfig& c) {
  RequireFlag(c.windows, "--windows");
  RequireFlag(c.labels, "--labels");
  RequireFlag(c.demo, "--demo");
  return dataset::LoadCohort({c.windows, c.labels, c.demo}, {c.binarize});
}

struct Prepared {
  dataset::SplitCohort split;
  std::vector<int> test_groups;
};

Prepared Prepare(const RunConfig& c) {
  const dataset::Cohort cohort = LoadData(c);
  if (!cohort.catalog.contains(c.protected_attr)) {
    throw Error(ErrorCode::kMissingAttribute, "demographics file has no column '" + c.protected_attr + "'");
  }
  const auto split = c.by_participant ? dataset::SplitCohortByParticipant(cohort, c.train.seed)
                                      : dataset::SplitCohortByWindow(cohort, c.train.seed);
  Prepared p;
  p.split = dataset::Standardize(split);
  p.test_groups = dataset::Groups(p.split.test, c.protected_attr);
  return p;
}

std::string PredictionsCsv(const dataset::Cohort& cohort, const mitigation::Predictions& pred) {
  std::ostringstream out;
  out << "sample_id,probability,prediction,anxiety\n";
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    out << cohort.windows[i].sample_id << ',' << io::FormatDouble(pred.probabilities[i]) << ','
        << pred.labels[i] << ',' << cohort.windows[i].anxiety << '\n';
  }
  return out.str();
}

// Model-level report; metrics that are undefined for these predictions are
// emitted as null with the reason under "errors".
ordered_json ModelReport(std::span<const int> preds, std::span<const int> labels, std::span<const int> groups,
                         const std::string& attribute) {
  ordered_json j;
  j["attribute"] = attribute;
  const auto t = fairness::Tally(preds, labels, groups);
  j["n_privileged"] = t.GroupSize(fairness::kPrivileged);
  j["n_unprivileged"] = t.GroupSize(fairness::kUnprivileged);
  ordered_json errors = ordered_json::array();
  std::optional<double> dir;
  try {
    dir = fairness::DisparateImpact(preds, groups);
  } catch (const Error& e) {
    errors.push_back(e.what());
  }
  std::optional<fairness::OddsDiffs> diffs;
  try {
    diffs = fairness::EqualizedOddsDiffs(preds, labels, groups);
  } catch (const Error& e) {
    errors.push_back(e.what());
  }
  j["dir"] = dir ? ordered_json(*dir) : ordered_json(nullptr);
  j["diff_fn"] = diffs ? ordered_json(diffs->diff_fn) : ordered_json(nullptr);
  j["diff_fp"] = diffs ? ordered_json(diffs->diff_fp) : ordered_json(nullptr);
  j["in_bounds"] = dir ? fairness::InBounds(*dir) : false;
  j["bounds"] = {fairness::kLowerBound, fairness::kUpperBound};
  j["accuracy"] = fairness::Accuracy(preds, labels);
  j["f1"] = fairness::F1Score(preds, labels);
  j["prediction_entropy"] = fairness::PredictionEntropy(preds);
  if (!errors.empty()) j["errors"] = errors;
  return j;
}

ordered_json EvaluateModel(const nnet::ModelParams& params, const Prepared& p, const RunConfig& c,
                           RunOutput& output, const std::string& prefix) {
  const auto pred = mitigation::FinalPredict(params, p.split.test, c.threshold);
  output.Write(prefix + "predictions.csv", PredictionsCsv(p.split.test, pred));
  return ModelReport(pred.labels, dataset::Labels(p.split.test), p.test_groups, c.protected_attr);
}

std::vector<double> ReweighingWeights(const dataset::Cohort& train, const std::string& attribute) {
  const auto labels = dataset::Labels(train);
  const auto groups = dataset::Groups(train, attribute);
  return fairness::SampleWeights(fairness::ReweighWeights(labels, groups), labels, groups);
}

// -- commands ---------------------------------------------------------------

std::vector<std::vector<double>> SplitByDuration(const std::vector<double>& rr, double window_sec) {
  if (window_sec <= 0.0) return {rr};
  std::vector<std::vector<double>> windows(1);
  double elapsed = 0.0;
  for (double v : rr) {
    if (elapsed + v > window_sec * 1000.0 && !windows.back().empty()) {
      windows.emplace_back();
      elapsed = 0.0;
    }
    windows.back().push_back(v);
    elapsed += v;
  }
  return windows;
}

void CmdExtract(const RunConfig& c, std::ostream& out) {
  if (c.ecg.empty() == c.nni.empty()) throw CLI::ValidationError("extract", "give exactly one of --ecg or --nni");
  std::vector<std::vector<double>> windows;
  if (!c.nni.empty()) {
    const auto table = io::ReadCsv(c.nni);
    const std::size_t col = table.Column("interval_ms");
    std::vector<double> rr;
    for (const auto& row : table.rows) rr.push_back(io::ParseDouble(row[col]));
    windows = SplitByDuration(rr, c.window_sec);
  } else {
    const auto table = io::ReadCsv(c.ecg);
    const std::size_t c_t = table.Column("t_seconds");
    const std::size_t c_v = table.Column("voltage");
    std::vector<double> t, v;
    for (const auto& row : table.rows) {
      t.push_back(io::ParseDouble(row[c_t]));
      v.push_back(io::ParseDouble(row[c_v]));
    }
    if (t.size() < 2) throw Error(ErrorCode::kInvalidInput, c.ecg + ": need at least two samples");
    std::vector<double> dt;
    for (std::size_t i = 1; i < t.size(); ++i) dt.push_back(t[i] - t[i - 1]);
    std::nth_element(dt.begin(), dt.begin() + std::ptrdiff_t(dt.size() / 2), dt.end());
    const double fs = 1.0 / dt[dt.size() / 2];
    std::size_t per = v.size();
    if (c.window_sec > 0.0) per = static_cast<std::size_t>(std::llround(c.window_sec * fs));
    for (std::size_t start = 0; start < v.size(); start += per) {
      hrv::EcgSignal sig;
      sig.sample_rate = fs;
      sig.samples.assign(v.begin() + std::ptrdiff_t(start),
                         v.begin() + std::ptrdiff_t(std::min(v.size(), start + per)));
      windows.push_back(hrv::DetectRPeaks(sig).intervals_ms);
    }
  }
  std::ostringstream csv;
  for (std::size_t f = 0; f < hrv::kNumFeatures; ++f) csv << (f ? "," : "") << hrv::kFeatureNames[f];
  csv << '\n';
  std::size_t flagged = 0;
  for (const auto& w : windows) {
    const auto fv = hrv::ExtractFeatures({w});
    flagged += fv.frequency_undefined ? 1 : 0;
    for (std::size_t f = 0; f < hrv::kNumFeatures; ++f) csv << (f ? "," : "") << io::FormatDouble(fv.values[f]);
    csv << '\n';
  }
  RunOutput output(c);
  output.Write("features.csv", csv.str());
  output.Finish();
  out << "extracted " << windows.size() << " window(s)";
  if (flagged > 0) out << "; " << flagged << " too short to resolve the vlf band";
  out << '\n';
}

void CmdSynth(const RunConfig& c, std::ostream& out) {
  dataset::SyntheticOptions opts;
  opts.attribute = c.attribute;
  const auto cohort = dataset::GenerateSynthetic(c.n, c.bias, c.train.seed, opts);
  RunOutput output(c);
  const fs::path dir = output.dir();
  dataset::WriteCohort(cohort, {dir / "windows.csv", dir / "labels.csv", dir / "demographics.csv"},
                       dataset::SyntheticDemographics(cohort));
  output.Register(dir / "windows.csv");
  output.Register(dir / "labels.csv");
  output.Register(dir / "demographics.csv");
  output.Write("catalog.json", dataset::CatalogJson(cohort.catalog));
  output.Finish();
  out << "wrote " << cohort.size() << " windows to " << dir.string() << '\n';
}

void CmdAudit(const RunConfig& c, std::ostream& out) {
  const auto cohort = LoadData(c);
  const auto report = fairness::AuditCohort(cohort, c.protected_attr);
  RunOutput output(c);
  output.WriteJson("report.json", fairness::ToJson(report));
  output.Write("catalog.json", dataset::CatalogJson(cohort.catalog));
  output.Finish();
  out << c.protected_attr << ": DIR " << report.dir << (report.in_bounds ? " (in bounds)" : " (out of bounds)")
      << '\n';
}

void CmdTrain(const RunConfig& c, std::ostream& out, bool reweigh) {
  const Prepared p = Prepare(c);
  RunOutput output(c);
  mitigation::TrainResult trained;
  if (reweigh) {
    const auto weights = ReweighingWeights(p.split.train, c.protected_attr);
    const auto labels = dataset::Labels(p.split.train);
    const auto groups = dataset::Groups(p.split.train, c.protected_attr);
    const auto cells = fairness::ReweighWeights(labels, groups);
    ordered_json wj;
    for (int g = 0; g < 2; ++g) {
      for (int y = 0; y < 2; ++y) {
        wj.push_back({{"group", g}, {"label", y}, {"weight", cells(g, y)}});
      }
    }
    output.WriteJson("weights.json", wj);
    trained = mitigation::TrainReweighted(p.split.train, c.train, weights);
  } else {
    trained = mitigation::TrainBaseline(p.split.train, c.train);
  }
  output.Write("model.bin", nnet::SerializeCheckpoint(trained.params));
  output.WriteJson("losses.json", trained.epoch_losses);
  const auto report = EvaluateModel(trained.params, p, c, output, "");
  output.WriteJson("report.json", report);
  output.Finish();
  out << report.dump(2) << '\n';
}

mitigation::MitigationResult Mitigate(const RunConfig& c, const Prepared& p, RunOutput& output) {
  const fs::path ckpt_dir = output.dir() / "checkpoints";
  fs::create_directories(ckpt_dir);
  const auto& eval = c.eval_split == "test" ? p.split.test : p.split.train;
  auto result = mitigation::RunMitigation(p.split.train, eval, c.protected_attr, c.train, ckpt_dir);
  for (const auto& ck : result.checkpoints.checkpoints) output.Register(ck.path);
  output.WriteJson("uncertainties.json", mitigation::RecordsJson(result.selection.records));
  output.WriteJson("selection.json", mitigation::SelectionJson(result.selection));
  return result;
}

void CmdMitigate(const RunConfig& c, std::ostream& out) {
  const Prepared p = Prepare(c);
  RunOutput output(c);
  const auto result = Mitigate(c, p, output);
  const auto selected = nnet::LoadCheckpoint(result.Selected().path);
  const auto report = EvaluateModel(selected, p, c, output, "");
  output.WriteJson("report.json", report);
  output.Finish();
  out << "selected epoch " << result.selection.chosen_epoch << " (gap " << result.selection.gap << ")\n"
      << report.dump(2) << '\n';
}

void CmdSaliency(const RunConfig& c, std::ostream& out) {
  RequireFlag(c.model, "--model");
  const Prepared p = Prepare(c);
  const auto params = nnet::LoadCheckpoint(c.model);
  const auto& cohort = c.split_part == "train" ? p.split.train : p.split.test;
  const auto map = saliency::AverageSaliency(params, cohort, c.head);
  RunOutput output(c);
  output.Write("saliency.csv", saliency::ToCsv(map));
  output.Write("saliency_abs.csv", saliency::ToCsv(map, true));
  output.Write("saliency.svg", saliency::ToSvg(map));
  output.Finish();
  out << "average saliency over " << cohort.size() << " samples; planted-column L1 mass "
      << saliency::ColumnL1Mass(map, dataset::kPlantedColumns) << '\n';
}

std::string FormatCell(const ordered_json& v) {
  if (v.is_null()) return "undef";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v.get<double>());
  return buf;
}

void CmdCompare(const RunConfig& c, std::ostream& out) {
  const Prepared p = Prepare(c);
  RunOutput output(c);
  const auto base = mitigation::TrainBaseline(p.split.train, c.train);
  const auto base_report = EvaluateModel(base.params, p, c, output, "base_");
  const auto weights = ReweighingWeights(p.split.train, c.protected_attr);
  const auto rew = mitigation::TrainReweighted(p.split.train, c.train, weights);
  const auto rew_report = EvaluateModel(rew.params, p, c, output, "reweighting_");
  const auto mit = Mitigate(c, p, output);
  const auto selected = nnet::LoadCheckpoint(mit.Selected().path);
  const auto prop_report = EvaluateModel(selected, p, c, output, "proposed_");

  ordered_json table;
  table["attribute"] = c.protected_attr;
  table["selected_epoch"] = mit.selection.chosen_epoch;
  table["base"] = base_report;
  table["reweighting"] = rew_report;
  table["proposed"] = prop_report;
  output.WriteJson("comparison.json", table);

  std::ostringstream text;
  char line[160];
  std::snprintf(line, sizeof(line), "Comparison of models based on %s\n", c.protected_attr.c_str());
  text << line;
  std::snprintf(line, sizeof(line), "%-12s %12s %12s %16s\n", "Metric", "Base Model", "Reweighting",
                "Proposed Method");
  text << line;
  const std::pair<const char*, const char*> rows[] = {
      {"Accuracy", "accuracy"}, {"F1", "f1"}, {"DI Ratio", "dir"}, {"Diff in FN", "diff_fn"}, {"Diff in FP", "diff_fp"}};
  for (const auto& [label, key] : rows) {
    std::snprintf(line, sizeof(line), "%-12s %12s %12s %16s\n", label, FormatCell(base_report[key]).c_str(),
                  FormatCell(rew_report[key]).c_str(), FormatCell(prop_report[key]).c_str());
    text << line;
  }
  output.Write("comparison.txt", text.str());
  output.Finish();
  out << text.str();
}

}  // namespace

int Run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Fairness audit and multi-task bias mitigation for HRV-based anxiety prediction", "fairmtl"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  const auto add_out = [&](CLI::App* sub) {
    sub->add_option("--out", cfg.out, "Output directory")->required();
    sub->add_option("--seed", cfg.train.seed, "Root seed for every random stream")->capture_default_str();
  };
  const auto add_data = [&](CLI::App* sub, bool need_protected) {
    sub->add_option("--windows", cfg.windows, "Windows CSV (sample_id, participant_id, step, 25 features)");
    sub->add_option("--labels", cfg.labels, "Labels CSV (sample_id, anxiety)");
    sub->add_option("--demo", cfg.demo, "Demographics CSV (participant_id, attributes...)");
    sub->add_flag("--binarize", cfg.binarize, "Labels are raw scores; binarize per participant");
    auto* opt = sub->add_option("--protected", cfg.protected_attr, "Protected attribute column");
    if (need_protected) opt->required();
  };
  const auto add_model_data = [&](CLI::App* sub) {
    add_data(sub, true);
    sub->add_flag("--by-participant", cfg.by_participant, "Split by participant instead of by window");
    sub->add_option("--threshold", cfg.threshold, "Decision threshold")->capture_default_str();
  };
  const auto add_train = [&](CLI::App* sub) {
    auto& t = cfg.train;
    sub->add_option("--epochs", t.epochs)->capture_default_str();
    sub->add_option("--ckpt-every", t.checkpoint_every)->capture_default_str();
    sub->add_option("--mc-passes", t.mc_passes)->capture_default_str();
    sub->add_option("--keep-rate", t.keep_rate)->capture_default_str();
    sub->add_option("--lr", t.lr)->capture_default_str();
    sub->add_option("--batch", t.batch_size)->capture_default_str();
    sub->add_option("--hidden", t.lstm_hidden, "LSTM units")->capture_default_str();
    sub->add_option("--dense", t.dense_units, "Dense units (0 disables)")->capture_default_str();
    sub->add_option("--anxiety-weight", t.task_weights[0])->capture_default_str();
    sub->add_option("--protected-weight", t.task_weights[1])->capture_default_str();
  };

  auto* extract = app.add_subcommand("extract", "ECG or NN intervals -> 25 HRV features per window");
  extract->add_option("--ecg", cfg.ecg, "ECG CSV (t_seconds, voltage)");
  extract->add_option("--nni", cfg.nni, "NN interval CSV (interval_ms)");
  extract->add_option("--window-sec", cfg.window_sec, "Window length in seconds (0 = whole input)");
  add_out(extract);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort with planted bias");
  synth->add_option("--n", cfg.n, "Number of windows")->capture_default_str();
  synth->add_option("--bias", cfg.bias, "Bias strength in [0, 1]")->capture_default_str();
  synth->add_option("--attribute", cfg.attribute, "Protected attribute name")->capture_default_str();
  add_out(synth);

  auto* audit = app.add_subcommand("audit", "Dataset-level fairness audit");
  add_data(audit, true);
  add_out(audit);

  auto* train_base = app.add_subcommand("train-base", "Train and evaluate the single-task baseline");
  auto* reweigh = app.add_subcommand("reweigh-train", "Train and evaluate the reweighting baseline");
  auto* mitigate = app.add_subcommand("mitigate", "Checkpointed MTL training + MC-dropout selection");
  auto* compare = app.add_subcommand("compare", "Base vs reweighting vs proposed on one split");
  for (auto* sub : {train_base, reweigh, mitigate, compare}) {
    add_model_data(sub);
    add_train(sub);
    add_out(sub);
  }
  for (auto* sub : {mitigate, compare}) {
    sub->add_option("--eval-split", cfg.eval_split, "Split the uncertainties are scored on")
        ->check(CLI::IsMember({"train", "test"}))
        ->capture_default_str();
  }

  auto* sal = app.add_subcommand("saliency", "Average input-gradient saliency of a checkpoint");
  add_model_data(sal);
  sal->add_option("--model", cfg.model, "Checkpoint file")->required();
  sal->add_option("--head", cfg.head, "Output head (0 = anxiety, 1 = protected)")->capture_default_str();
  sal->add_option("--split", cfg.split_part, "Cohort part to average over")
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  add_out(sal);

  try {
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    cfg.command = sub->get_name();
    if (cfg.command == "extract") {
      CmdExtract(cfg, out);
    } else if (cfg.command == "synth") {
      CmdSynth(cfg, out);
    } else if (cfg.command == "audit") {
      CmdAudit(cfg, out);
    } else if (cfg.command == "train-base") {
      CmdTrain(cfg, out, false);
    } else if (cfg.command == "reweigh-train") {
      CmdTrain(cfg, out, true);
    } else if (cfg.command == "mitigate") {
      CmdMitigate(cfg, out);
    } else if (cfg.command == "saliency") {
      CmdSaliency(cfg, out);
    } else if (cfg.command == "compare") {
      CmdCompare(cfg, out);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidInput && cfg.command.empty()) {
      err << "error: " << e.what() << '\n';
      return 2;
    }
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace fairmtl::cli
