#pragma once

// Shared helpers for the unit and acceptance tests.

#include <random>
#include <vector>

#include "fairmtl/nnet.hpp"
#include "oracles/nnet_oracle.hpp"

namespace testing_support {

using fairmtl::nnet::Architecture;
using fairmtl::nnet::ModelParams;
using fairmtl::nnet::Tensor;

inline ModelParams RandomParams(const Architecture& arch, std::mt19937_64& rng, double scale = 0.5) {
  ModelParams p = fairmtl::nnet::ZeroParams(arch);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& t : p.tensors) {
    for (double& v : t.tensor.data) v = u(rng);
  }
  return p;
}

inline Tensor RandomInput(const Architecture& arch, std::mt19937_64& rng) {
  Tensor x({arch.steps, arch.features});
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : x.data) v = n(rng);
  return x;
}

inline Architecture RandomArchitecture(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> feat(1, 4), hid(0, 4), den(0, 4), heads(1, 2);
  Architecture a;
  a.features = feat(rng);
  a.lstm_hidden = hid(rng);
  a.dense_units = den(rng);
  a.heads = heads(rng);
  return a;
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Compares analytic parameter gradients of the weighted MTL loss against
// central differences for one random batch, optionally under a fixed
// dropout mask.
inline GradCheck CheckParameterGradients(const Architecture& arch, std::mt19937_64& rng, bool with_mask) {
  using namespace fairmtl::nnet;
  ModelParams params = RandomParams(arch, rng);
  std::uniform_int_distribution<std::size_t> bsz(1, 3);
  const std::size_t batch = bsz(rng);
  std::vector<Tensor> xs;
  BatchInput in;
  for (std::size_t s = 0; s < batch; ++s) xs.push_back(RandomInput(arch, rng));
  for (const auto& x : xs) in.emplace_back(x.data);
  Matrix targets(Eigen::Index(arch.heads), Eigen::Index(batch));
  std::bernoulli_distribution coin(0.5);
  for (Eigen::Index k = 0; k < targets.rows(); ++k) {
    for (Eigen::Index s = 0; s < targets.cols(); ++s) targets(k, s) = coin(rng) ? 1.0 : 0.0;
  }
  std::uniform_real_distribution<double> wdist(0.1, 5.0);
  std::vector<double> task_w, sample_w;
  for (std::size_t k = 0; k < arch.heads; ++k) task_w.push_back(wdist(rng));
  for (std::size_t s = 0; s < batch; ++s) sample_w.push_back(wdist(rng));

  DropoutMask mask;
  fairmtl::Rng mask_rng(rng());
  if (with_mask) mask = SampleMask(arch, batch, 0.7, mask_rng);
  const DropoutMask* mp = with_mask ? &mask : nullptr;

  const auto loss = [&] { return MtlLoss(Forward(params, in, mp).outputs, targets, task_w, sample_w).total; };
  const auto trace = Forward(params, in, mp);
  const auto grads = Backward(params, trace, targets, task_w, sample_w);
  GradCheck result;
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    auto& data = params.tensors[k].tensor.data;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double numeric = oracle::CentralDifference(loss, data[i]);
      result.max_rel_err = std::max(result.max_rel_err, oracle::RelErr(grads[k].data[i], numeric));
      ++result.checked;
    }
  }
  return result;
}

// Same comparison for the input gradient of one head's logit.
inline GradCheck CheckInputGradient(const Architecture& arch, std::mt19937_64& rng) {
  using namespace fairmtl::nnet;
  const ModelParams params = RandomParams(arch, rng);
  Tensor x = RandomInput(arch, rng);
  std::uniform_int_distribution<std::size_t> hd(0, arch.heads - 1);
  const std::size_t head = hd(rng);
  const Tensor g = InputGradient(params, x, head);
  const auto logit = [&] { return Forward(params, x).logits(Eigen::Index(head), 0); };
  GradCheck result;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double numeric = oracle::CentralDifference(logit, x.data[i]);
    result.max_rel_err = std::max(result.max_rel_err, oracle::RelErr(g.data[i], numeric));
    ++result.checked;
  }
  return result;
}

}  // namespace testing_support
