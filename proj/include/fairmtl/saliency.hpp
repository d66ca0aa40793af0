#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>

#include "fairmtl/dataset.hpp"
#include "fairmtl/nnet.hpp"

namespace fairmtl::saliency {

struct SaliencyMap {
  nnet::Tensor values;  // steps x features, signed
  std::string head_label;

  double at(std::size_t step, std::size_t feature) const {
    return values.data[step * values.cols() + feature];
  }
};

enum class ScoreSign {
  // Gradient of the head's pre-sigmoid score (the positive-class logit).
  kPositiveClass,
  // Negate the gradient when the head predicts class 0, i.e. differentiate
  // the logit of the predicted class.
  kPredictedClass,
};

SaliencyMap SaliencyForSample(const nnet::ModelParams& params, const nnet::Tensor& input, std::size_t head,
                              ScoreSign sign = ScoreSign::kPositiveClass);

// Elementwise mean over the cohort's per-sample maps (compensated sums).
SaliencyMap AverageSaliency(const nnet::ModelParams& params, const dataset::Cohort& cohort, std::size_t head,
                            ScoreSign sign = ScoreSign::kPositiveClass);

// Sum of |value| over the given feature columns, all steps.
double ColumnL1Mass(const SaliencyMap& map, std::span<const std::size_t> columns);

std::string ToCsv(const SaliencyMap& map, bool absolute = false);

// Heatmap: rows are steps, columns features; diverging blue-white-red scale
// symmetric about 0.
std::string ToSvg(const SaliencyMap& map);

}  // namespace fairmtl::saliency
