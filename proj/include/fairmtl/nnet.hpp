#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairmtl/rng.hpp"

// A small fixed-topology network: shared LSTM trunk (final hidden state),
// dropout, optional dense ReLU layer, dropout, and one sigmoid unit per task.
namespace fairmtl::nnet {

using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;  // row-major

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  Eigen::Map<RowMatrix> matrix() { return {data.data(), Eigen::Index(rows()), Eigen::Index(cols())}; }
  Eigen::Map<const RowMatrix> matrix() const {
    return {data.data(), Eigen::Index(rows()), Eigen::Index(cols())};
  }

  bool operator==(const Tensor&) const = default;
};

struct Architecture {
  std::size_t steps = 24;
  std::size_t features = 25;
  // 0 feeds the flattened input straight to the next layer.
  std::size_t lstm_hidden = 64;
  // 0 drops the dense layer.
  std::size_t dense_units = 32;
  std::size_t heads = 2;

  std::size_t trunk_width() const { return lstm_hidden > 0 ? lstm_hidden : steps * features; }
  std::size_t head_inputs() const { return dense_units > 0 ? dense_units : trunk_width(); }
  bool operator==(const Architecture&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool operator==(const NamedTensor&) const = default;
};

// Tensor names: lstm.W_x [4H, F], lstm.W_h [4H, H], lstm.b [4H] (gate rows
// ordered input, forget, cell, output); dense.W [D, trunk], dense.b [D];
// head.W [K, in], head.b [K].
struct ModelParams {
  std::vector<NamedTensor> tensors;
  std::uint32_t epoch = 0;
  std::uint64_t rng_seed = 0;

  bool Has(std::string_view name) const;
  const Tensor& Get(std::string_view name) const;
  Tensor& Get(std::string_view name);
  std::size_t ParameterCount() const;
  bool operator==(const ModelParams&) const = default;
};

// All-zero tensors in the layout for `arch`.
ModelParams ZeroParams(const Architecture& arch);
// Glorot-uniform weights, zero biases, forget-gate bias 1.
ModelParams InitParams(const Architecture& arch, std::uint64_t seed);
// Recovers the layout from tensor shapes; `steps` cannot be read off the
// shapes when an LSTM is present.
Architecture InferArchitecture(const ModelParams& params, std::size_t steps = 24);

using Gradients = std::vector<Tensor>;  // aligned with ModelParams::tensors
Gradients ZeroGradients(const ModelParams& params);

// Binary keep masks (units x batch) for the two dropout points. An empty
// matrix means the layer is absent. Kept units are scaled by 1/keep_rate.
struct DropoutMask {
  Matrix trunk;
  Matrix dense;
  double keep_rate = 1.0;
};

DropoutMask SampleMask(const Architecture& arch, std::size_t batch, double keep_rate, Rng& rng);

// One row-major steps x features matrix per sample.
using BatchInput = std::vector<std::span<const double>>;

struct ForwardTrace {
  Architecture arch;
  std::size_t batch = 0;
  std::vector<Matrix> x;       // per step, F x B
  std::vector<Matrix> gates;   // per step, activated gates 4H x B
  std::vector<Matrix> cell;    // per step, c_t (H x B)
  std::vector<Matrix> hidden;  // per step, h_t (H x B)
  Matrix trunk;                // pre-dropout trunk output
  Matrix trunk_out;            // post-dropout
  Matrix dense_pre;
  Matrix dense_out;            // post-ReLU, post-dropout
  Matrix trunk_scale;          // mask / keep_rate, empty when no dropout
  Matrix dense_scale;
  Matrix logits;               // K x B
  Matrix outputs;              // sigmoid(logits)
};

ForwardTrace Forward(const ModelParams& params, const BatchInput& inputs,
                     const DropoutMask* mask = nullptr);
// Single-sample convenience; input is steps x features.
ForwardTrace Forward(const ModelParams& params, const Tensor& input, const DropoutMask* mask = nullptr);

inline constexpr double kProbClamp = 1e-12;

struct LossValue {
  double total = 0.0;
  std::vector<double> per_task;  // unweighted by task weight
};

// Weighted batch mean of sum_k task_weight_k * BCE(output_k, target_k): the
// per-sample terms are scaled by sample_weights and divided by their sum.
// Empty sample_weights means all ones.
LossValue MtlLoss(const Matrix& outputs, const Matrix& targets, std::span<const double> task_weights,
                  std::span<const double> sample_weights = {});

// d(MtlLoss)/d(logits); zero where the probability clamp is active.
Matrix LossGradient(const Matrix& outputs, const Matrix& targets, std::span<const double> task_weights,
                    std::span<const double> sample_weights = {});

struct BackwardResult {
  Gradients grads;
  std::vector<Matrix> input_grads;  // per sample, steps x features (only when requested)
};

// Backpropagates an arbitrary upstream gradient on the logits.
BackwardResult BackwardFromLogits(const ModelParams& params, const ForwardTrace& trace,
                                  const Matrix& logit_grad, bool want_input_grad = false);

Gradients Backward(const ModelParams& params, const ForwardTrace& trace, const Matrix& targets,
                   std::span<const double> task_weights, std::span<const double> sample_weights = {});

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

AdamState MakeAdamState(const ModelParams& params);
void AdamStep(ModelParams& params, const Gradients& grads, AdamState& state, double lr);

struct McEstimate {
  std::vector<double> mean;      // per head
  std::vector<double> variance;  // per head, population variance over passes
};

// T stochastic passes with freshly sampled masks.
McEstimate McForward(const ModelParams& params, const Tensor& input, std::size_t passes,
                     double keep_rate, Rng& rng);
// Same estimate over explicit masks, one pass per mask column.
McEstimate McForward(const ModelParams& params, const Tensor& input, const DropoutMask& masks);
// Mean and population variance of columns [first_col, first_col + passes).
McEstimate SummarizePasses(const Matrix& outputs, Eigen::Index first_col, std::size_t passes);

// Gradient of head `head`'s pre-sigmoid score with respect to the input,
// dropout disabled. Returns a steps x features tensor.
Tensor InputGradient(const ModelParams& params, const Tensor& input, std::size_t head);

// Checkpoint file: "FRLT", u32 version, u32 epoch, u64 seed, u32 count, then
// per tensor u16 name length, name, u8 rank, u32 dims, f64 payload; all
// little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string SerializeCheckpoint(const ModelParams& params);
ModelParams DeserializeCheckpoint(std::string_view bytes);
void SaveCheckpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams LoadCheckpoint(const std::filesystem::path& path);

}  // namespace fairmtl::nnet
