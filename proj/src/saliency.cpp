#include "fairmtl/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fairmtl/error.hpp"
#include "fairmtl/io.hpp"

namespace fairmtl::saliency {
namespace {

std::string HeadLabel(std::size_t head) {
  return head == 0 ? "anxiety" : head == 1 ? "protected" : "head" + std::to_string(head);
}

std::string FeatureName(std::size_t f, std::size_t n_features) {
  if (n_features == hrv::kNumFeatures) return std::string(hrv::kFeatureNames[f]);
  return "f" + std::to_string(f);
}

// Neumaier summation.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;

  void Add(double v) {
    const double t = sum + v;
    carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double Value() const { return sum + carry; }
};

}  // namespace

SaliencyMap SaliencyForSample(const nnet::ModelParams& params, const nnet::Tensor& input, std::size_t head,
                              ScoreSign sign) {
  SaliencyMap map;
  map.head_label = HeadLabel(head);
  map.values = nnet::InputGradient(params, input, head);
  if (sign == ScoreSign::kPredictedClass) {
    const auto tr = nnet::Forward(params, input);
    if (tr.outputs(Eigen::Index(head), 0) < 0.5) {
      for (double& v : map.values.data) v = -v;
    }
  }
  return map;
}

SaliencyMap AverageSaliency(const nnet::ModelParams& params, const dataset::Cohort& cohort, std::size_t head,
                            ScoreSign sign) {
  if (cohort.empty()) throw Error(ErrorCode::kEmptyCohort, "saliency needs at least one sample");
  const nnet::Architecture arch = nnet::InferArchitecture(params);
  if (head >= arch.heads) throw Error(ErrorCode::kShapeMismatch, "head index out of range");
  const std::size_t cells = arch.steps * arch.features;
  std::vector<CompensatedSum> acc(cells);

  constexpr std::size_t kChunk = 128;
  for (std::size_t start = 0; start < cohort.size(); start += kChunk) {
    const std::size_t end = std::min(cohort.size(), start + kChunk);
    nnet::BatchInput batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.emplace_back(cohort.windows[i].features.data(), cohort.windows[i].features.size());
    }
    const auto tr = nnet::Forward(params, batch);
    nnet::Matrix seed = nnet::Matrix::Zero(tr.logits.rows(), tr.logits.cols());
    for (Eigen::Index s = 0; s < seed.cols(); ++s) {
      const bool flip = sign == ScoreSign::kPredictedClass && tr.outputs(Eigen::Index(head), s) < 0.5;
      seed(Eigen::Index(head), s) = flip ? -1.0 : 1.0;
    }
    const auto back = nnet::BackwardFromLogits(params, tr, seed, true);
    for (const auto& g : back.input_grads) {
      for (std::size_t c = 0; c < cells; ++c) {
        acc[c].Add(g(Eigen::Index(c / arch.features), Eigen::Index(c % arch.features)));
      }
    }
  }
  SaliencyMap map;
  map.head_label = HeadLabel(head);
  map.values = nnet::Tensor({arch.steps, arch.features});
  const double n = static_cast<double>(cohort.size());
  for (std::size_t c = 0; c < cells; ++c) map.values.data[c] = acc[c].Value() / n;
  return map;
}

double ColumnL1Mass(const SaliencyMap& map, std::span<const std::size_t> columns) {
  double mass = 0.0;
  for (std::size_t s = 0; s < map.values.rows(); ++s) {
    for (std::size_t f : columns) mass += std::abs(map.at(s, f));
  }
  return mass;
}

std::string ToCsv(const SaliencyMap& map, bool absolute) {
  const std::size_t n_features = map.values.cols();
  std::ostringstream out;
  for (std::size_t f = 0; f < n_features; ++f) out << (f ? "," : "") << FeatureName(f, n_features);
  out << '\n';
  for (std::size_t s = 0; s < map.values.rows(); ++s) {
    for (std::size_t f = 0; f < n_features; ++f) {
      const double v = map.at(s, f);
      out << (f ? "," : "") << io::FormatDouble(absolute ? std::abs(v) : v);
    }
    out << '\n';
  }
  return out.str();
}

std::string ToSvg(const SaliencyMap& map) {
  constexpr int kCell = 24;
  constexpr int kLeft = 40;
  constexpr int kTop = 110;
  const std::size_t steps = map.values.rows();
  const std::size_t n_features = map.values.cols();
  const int width = kLeft + int(n_features) * kCell + 20;
  const int height = kTop + int(steps) * kCell + 40;
  double scale = 0.0;
  for (double v : map.values.data) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) scale = 1.0;

  const auto color = [scale](double v) {
    const double t = std::clamp(v / scale, -1.0, 1.0);
    int r = 255, g = 255, b = 255;
    if (t >= 0) {
      g = b = static_cast<int>(std::lround(255.0 * (1.0 - t)));
    } else {
      r = g = static_cast<int>(std::lround(255.0 * (1.0 + t)));
    }
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return std::string(buf);
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  svg << "<text x=\"" << kLeft << "\" y=\"14\" font-size=\"12\">saliency: " << map.head_label
      << " (max |value| " << io::FormatDouble(scale) << ")</text>\n";
  for (std::size_t f = 0; f < n_features; ++f) {
    const int x = kLeft + int(f) * kCell + kCell / 2;
    svg << "<text transform=\"translate(" << x << "," << (kTop - 4) << ") rotate(-60)\">"
        << FeatureName(f, n_features) << "</text>\n";
  }
  for (std::size_t s = 0; s < steps; ++s) {
    const int y = kTop + int(s) * kCell;
    svg << "<text x=\"" << (kLeft - 4) << "\" y=\"" << (y + kCell / 2 + 4) << "\" text-anchor=\"end\">" << s
        << "</text>\n";
    for (std::size_t f = 0; f < n_features; ++f) {
      svg << "<rect x=\"" << (kLeft + int(f) * kCell) << "\" y=\"" << y << "\" width=\"" << kCell
          << "\" height=\"" << kCell << "\" fill=\"" << color(map.at(s, f)) << "\"/>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace fairmtl::saliency
