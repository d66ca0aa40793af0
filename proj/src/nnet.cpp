#include "fairmtl/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fairmtl/error.hpp"

namespace fairmtl::nnet {
namespace {

constexpr std::string_view kLstmWx = "lstm.W_x";
constexpr std::string_view kLstmWh = "lstm.W_h";
constexpr std::string_view kLstmB = "lstm.b";
constexpr std::string_view kDenseW = "dense.W";
constexpr std::string_view kDenseB = "dense.b";
constexpr std::string_view kHeadW = "head.W";
constexpr std::string_view kHeadB = "head.b";

double Sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Batch size without sample weights, otherwise their sum.
double Normalizer(Eigen::Index batch, std::span<const double> sample_weights) {
  if (sample_weights.empty()) return static_cast<double>(batch);
  return std::accumulate(sample_weights.begin(), sample_weights.end(), 0.0);
}

Eigen::Map<const Eigen::VectorXd> AsVector(const Tensor& t) {
  return {t.data.data(), Eigen::Index(t.size())};
}

Eigen::Map<Eigen::VectorXd> AsVector(Tensor& t) { return {t.data.data(), Eigen::Index(t.size())}; }

void AddTo(Tensor& dst, const Matrix& src) {
  // src is column-major; dst row-major with the same logical shape.
  dst.matrix() += src;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  data.assign(n, 0.0);
}

bool ModelParams::Has(std::string_view name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& t) { return t.name == name; });
}

const Tensor& ModelParams::Get(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw Error(ErrorCode::kShapeMismatch, "missing parameter tensor " + std::string(name));
}

Tensor& ModelParams::Get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).Get(name));
}

std::size_t ModelParams::ParameterCount() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.tensor.size();
  return n;
}

ModelParams ZeroParams(const Architecture& arch) {
  ModelParams p;
  const std::size_t h = arch.lstm_hidden;
  if (h > 0) {
    p.tensors.push_back({std::string(kLstmWx), Tensor({4 * h, arch.features})});
    p.tensors.push_back({std::string(kLstmWh), Tensor({4 * h, h})});
    p.tensors.push_back({std::string(kLstmB), Tensor({4 * h})});
  }
  if (arch.dense_units > 0) {
    p.tensors.push_back({std::string(kDenseW), Tensor({arch.dense_units, arch.trunk_width()})});
    p.tensors.push_back({std::string(kDenseB), Tensor({arch.dense_units})});
  }
  p.tensors.push_back({std::string(kHeadW), Tensor({arch.heads, arch.head_inputs()})});
  p.tensors.push_back({std::string(kHeadB), Tensor({arch.heads})});
  return p;
}

ModelParams InitParams(const Architecture& arch, std::uint64_t seed) {
  ModelParams p = ZeroParams(arch);
  p.rng_seed = seed;
  Rng rng = MakeRng(seed, "init");
  const auto glorot = [&rng](Tensor& t, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : t.data) v = dist(rng);
  };
  const std::size_t h = arch.lstm_hidden;
  if (h > 0) {
    glorot(p.Get(kLstmWx), arch.features, 4 * h);
    glorot(p.Get(kLstmWh), h, 4 * h);
    auto& b = p.Get(kLstmB).data;
    std::fill(b.begin() + static_cast<std::ptrdiff_t>(h), b.begin() + static_cast<std::ptrdiff_t>(2 * h), 1.0);
  }
  if (arch.dense_units > 0) glorot(p.Get(kDenseW), arch.trunk_width(), arch.dense_units);
  glorot(p.Get(kHeadW), arch.head_inputs(), arch.heads);
  return p;
}

Architecture InferArchitecture(const ModelParams& params, std::size_t steps) {
  Architecture arch;
  arch.steps = steps;
  const Tensor& head_w = params.Get(kHeadW);
  if (head_w.shape.size() != 2) throw Error(ErrorCode::kShapeMismatch, "head.W must be rank 2");
  arch.heads = head_w.shape[0];
  std::size_t trunk = 0;
  if (params.Has(kLstmWx)) {
    const Tensor& wx = params.Get(kLstmWx);
    if (wx.shape.size() != 2 || wx.shape[0] % 4 != 0) {
      throw Error(ErrorCode::kShapeMismatch, "lstm.W_x must be [4H, F]");
    }
    arch.lstm_hidden = wx.shape[0] / 4;
    arch.features = wx.shape[1];
    trunk = arch.lstm_hidden;
    if (params.Get(kLstmWh).shape != std::vector<std::size_t>{4 * arch.lstm_hidden, arch.lstm_hidden} ||
        params.Get(kLstmB).shape != std::vector<std::size_t>{4 * arch.lstm_hidden}) {
      throw Error(ErrorCode::kShapeMismatch, "lstm tensors disagree on hidden size");
    }
  } else {
    arch.lstm_hidden = 0;
  }
  if (params.Has(kDenseW)) {
    const Tensor& dw = params.Get(kDenseW);
    if (dw.shape.size() != 2) throw Error(ErrorCode::kShapeMismatch, "dense.W must be rank 2");
    arch.dense_units = dw.shape[0];
    if (trunk == 0) trunk = dw.shape[1];
    if (dw.shape[1] != trunk || params.Get(kDenseB).shape != std::vector<std::size_t>{arch.dense_units}) {
      throw Error(ErrorCode::kShapeMismatch, "dense tensors disagree with trunk width");
    }
    if (head_w.shape[1] != arch.dense_units) {
      throw Error(ErrorCode::kShapeMismatch, "head.W input width disagrees with dense layer");
    }
  } else {
    arch.dense_units = 0;
    if (trunk == 0) trunk = head_w.shape[1];
    if (head_w.shape[1] != trunk) throw Error(ErrorCode::kShapeMismatch, "head.W disagrees with trunk");
  }
  if (params.Get(kHeadB).shape != std::vector<std::size_t>{arch.heads}) {
    throw Error(ErrorCode::kShapeMismatch, "head.b disagrees with head count");
  }
  if (arch.lstm_hidden == 0) {
    if (steps == 0 || trunk % steps != 0) {
      throw Error(ErrorCode::kShapeMismatch, "flattened input width not divisible by step count");
    }
    arch.features = trunk / steps;
  }
  return arch;
}

Gradients ZeroGradients(const ModelParams& params) {
  Gradients g;
  g.reserve(params.tensors.size());
  for (const auto& t : params.tensors) g.emplace_back(t.tensor.shape);
  return g;
}

DropoutMask SampleMask(const Architecture& arch, std::size_t batch, double keep_rate, Rng& rng) {
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) {
    throw Error(ErrorCode::kInvalidInput, "keep_rate must lie in (0, 1]");
  }
  DropoutMask mask;
  mask.keep_rate = keep_rate;
  std::bernoulli_distribution keep(keep_rate);
  const auto fill = [&](Matrix& m, std::size_t units) {
    m.resize(Eigen::Index(units), Eigen::Index(batch));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = keep(rng) ? 1.0 : 0.0;
    }
  };
  fill(mask.trunk, arch.trunk_width());
  if (arch.dense_units > 0) fill(mask.dense, arch.dense_units);
  return mask;
}

ForwardTrace Forward(const ModelParams& params, const BatchInput& inputs, const DropoutMask* mask) {
  ForwardTrace tr;
  tr.arch = InferArchitecture(params);
  const Architecture& a = tr.arch;
  const std::size_t batch = inputs.size();
  tr.batch = batch;
  const std::size_t window = a.steps * a.features;
  for (const auto& in : inputs) {
    if (in.size() != window) {
      throw Error(ErrorCode::kShapeMismatch, "input has " + std::to_string(in.size()) +
                                                 " values, expected " + std::to_string(a.steps) + "x" +
                                                 std::to_string(a.features));
    }
  }
  const auto B = Eigen::Index(batch);
  if (mask != nullptr) {
    if (mask->trunk.rows() != Eigen::Index(a.trunk_width()) || mask->trunk.cols() != B ||
        (a.dense_units > 0 && (mask->dense.rows() != Eigen::Index(a.dense_units) || mask->dense.cols() != B))) {
      throw Error(ErrorCode::kShapeMismatch, "dropout mask does not match architecture/batch");
    }
  }

  if (a.lstm_hidden > 0) {
    const auto H = Eigen::Index(a.lstm_hidden);
    const auto F = Eigen::Index(a.features);
    const auto wx = params.Get(kLstmWx).matrix();
    const auto wh = params.Get(kLstmWh).matrix();
    const auto b = AsVector(params.Get(kLstmB));
    Matrix h = Matrix::Zero(H, B);
    Matrix c = Matrix::Zero(H, B);
    tr.x.reserve(a.steps);
    tr.gates.reserve(a.steps);
    tr.cell.reserve(a.steps);
    tr.hidden.reserve(a.steps);
    for (std::size_t t = 0; t < a.steps; ++t) {
      Matrix xt(F, B);
      for (Eigen::Index s = 0; s < B; ++s) {
        const double* row = inputs[std::size_t(s)].data() + t * a.features;
        for (Eigen::Index f = 0; f < F; ++f) xt(f, s) = row[f];
      }
      Matrix g = wx * xt + wh * h;
      g.colwise() += b;
      for (Eigen::Index s = 0; s < B; ++s) {
        for (Eigen::Index r = 0; r < H; ++r) {
          g(r, s) = Sigmoid(g(r, s));
          g(H + r, s) = Sigmoid(g(H + r, s));
          g(2 * H + r, s) = std::tanh(g(2 * H + r, s));
          g(3 * H + r, s) = Sigmoid(g(3 * H + r, s));
        }
      }
      c = g.middleRows(H, H).cwiseProduct(c) + g.topRows(H).cwiseProduct(g.middleRows(2 * H, H));
      h = g.bottomRows(H).cwiseProduct(c.array().tanh().matrix());
      tr.x.push_back(std::move(xt));
      tr.gates.push_back(std::move(g));
      tr.cell.push_back(c);
      tr.hidden.push_back(h);
    }
    tr.trunk = h;
  } else {
    tr.trunk.resize(Eigen::Index(window), B);
    for (Eigen::Index s = 0; s < B; ++s) {
      const auto& in = inputs[std::size_t(s)];
      for (std::size_t i = 0; i < window; ++i) tr.trunk(Eigen::Index(i), s) = in[i];
    }
  }

  const double inv_keep = mask != nullptr ? 1.0 / mask->keep_rate : 1.0;
  if (mask != nullptr) {
    tr.trunk_scale = mask->trunk * inv_keep;
    tr.trunk_out = tr.trunk.cwiseProduct(tr.trunk_scale);
  } else {
    tr.trunk_out = tr.trunk;
  }

  const Matrix* head_in = &tr.trunk_out;
  if (a.dense_units > 0) {
    tr.dense_pre = params.Get(kDenseW).matrix() * tr.trunk_out;
    tr.dense_pre.colwise() += AsVector(params.Get(kDenseB));
    tr.dense_out = tr.dense_pre.cwiseMax(0.0);
    if (mask != nullptr) {
      tr.dense_scale = mask->dense * inv_keep;
      tr.dense_out = tr.dense_out.cwiseProduct(tr.dense_scale);
    }
    head_in = &tr.dense_out;
  }
  tr.logits = params.Get(kHeadW).matrix() * (*head_in);
  tr.logits.colwise() += AsVector(params.Get(kHeadB));
  tr.outputs = tr.logits.unaryExpr([](double z) { return Sigmoid(z); });
  return tr;
}

ForwardTrace Forward(const ModelParams& params, const Tensor& input, const DropoutMask* mask) {
  const Architecture arch = InferArchitecture(params);
  if (input.shape != std::vector<std::size_t>{arch.steps, arch.features}) {
    throw Error(ErrorCode::kShapeMismatch, "input tensor must be " + std::to_string(arch.steps) + "x" +
                                               std::to_string(arch.features));
  }
  return Forward(params, BatchInput{std::span<const double>(input.data)}, mask);
}

LossValue MtlLoss(const Matrix& outputs, const Matrix& targets, std::span<const double> task_weights,
                  std::span<const double> sample_weights) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols() ||
      std::size_t(outputs.rows()) != task_weights.size() ||
      (!sample_weights.empty() && std::size_t(outputs.cols()) != sample_weights.size())) {
    throw Error(ErrorCode::kShapeMismatch, "loss operands are misaligned");
  }
  LossValue loss;
  loss.per_task.assign(task_weights.size(), 0.0);
  const double inv_batch = 1.0 / Normalizer(outputs.cols(), sample_weights);
  for (Eigen::Index k = 0; k < outputs.rows(); ++k) {
    double acc = 0.0;
    for (Eigen::Index s = 0; s < outputs.cols(); ++s) {
      const double p = std::clamp(outputs(k, s), kProbClamp, 1.0 - kProbClamp);
      const double y = targets(k, s);
      const double bce = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
      acc += (sample_weights.empty() ? 1.0 : sample_weights[std::size_t(s)]) * bce;
    }
    loss.per_task[std::size_t(k)] = acc * inv_batch;
    loss.total += task_weights[std::size_t(k)] * loss.per_task[std::size_t(k)];
  }
  return loss;
}

Matrix LossGradient(const Matrix& outputs, const Matrix& targets, std::span<const double> task_weights,
                    std::span<const double> sample_weights) {
  Matrix grad(outputs.rows(), outputs.cols());
  const double norm = Normalizer(outputs.cols(), sample_weights);
  if (!(norm > 0.0)) return Matrix::Zero(outputs.rows(), outputs.cols());
  const double inv_batch = 1.0 / norm;
  for (Eigen::Index k = 0; k < outputs.rows(); ++k) {
    for (Eigen::Index s = 0; s < outputs.cols(); ++s) {
      const double p = outputs(k, s);
      const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
      const double sw = sample_weights.empty() ? 1.0 : sample_weights[std::size_t(s)];
      grad(k, s) = clamped ? 0.0 : inv_batch * sw * task_weights[std::size_t(k)] * (p - targets(k, s));
    }
  }
  return grad;
}

BackwardResult BackwardFromLogits(const ModelParams& params, const ForwardTrace& trace,
                                  const Matrix& logit_grad, bool want_input_grad) {
  const Architecture arch = InferArchitecture(params, trace.arch.steps);
  if (!(arch == trace.arch) || trace.logits.cols() != Eigen::Index(trace.batch) ||
      logit_grad.rows() != trace.logits.rows() || logit_grad.cols() != trace.logits.cols()) {
    throw Error(ErrorCode::kStaleTrace, "trace was produced by a different architecture or batch");
  }
  BackwardResult result;
  result.grads = ZeroGradients(params);
  const auto index_of = [&params](std::string_view name) {
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      if (params.tensors[i].name == name) return i;
    }
    throw Error(ErrorCode::kShapeMismatch, "missing parameter tensor " + std::string(name));
  };

  const Matrix& head_in = arch.dense_units > 0 ? trace.dense_out : trace.trunk_out;
  AddTo(result.grads[index_of(kHeadW)], logit_grad * head_in.transpose());
  AsVector(result.grads[index_of(kHeadB)]) += logit_grad.rowwise().sum();
  Matrix upstream = params.Get(kHeadW).matrix().transpose() * logit_grad;

  if (arch.dense_units > 0) {
    if (trace.dense_scale.size() > 0) upstream = upstream.cwiseProduct(trace.dense_scale);
    const Matrix d_pre = upstream.cwiseProduct(
        trace.dense_pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    AddTo(result.grads[index_of(kDenseW)], d_pre * trace.trunk_out.transpose());
    AsVector(result.grads[index_of(kDenseB)]) += d_pre.rowwise().sum();
    upstream = params.Get(kDenseW).matrix().transpose() * d_pre;
  }
  if (trace.trunk_scale.size() > 0) upstream = upstream.cwiseProduct(trace.trunk_scale);

  const auto B = Eigen::Index(trace.batch);
  if (want_input_grad) {
    result.input_grads.assign(trace.batch, Matrix::Zero(Eigen::Index(arch.steps), Eigen::Index(arch.features)));
  }

  if (arch.lstm_hidden == 0) {
    if (want_input_grad) {
      for (Eigen::Index s = 0; s < B; ++s) {
        Matrix& g = result.input_grads[std::size_t(s)];
        for (std::size_t i = 0; i < arch.steps * arch.features; ++i) {
          g(Eigen::Index(i / arch.features), Eigen::Index(i % arch.features)) = upstream(Eigen::Index(i), s);
        }
      }
    }
    return result;
  }

  const auto H = Eigen::Index(arch.lstm_hidden);
  const auto wx = params.Get(kLstmWx).matrix();
  const auto wh = params.Get(kLstmWh).matrix();
  Tensor& g_wx = result.grads[index_of(kLstmWx)];
  Tensor& g_wh = result.grads[index_of(kLstmWh)];
  auto g_b = AsVector(result.grads[index_of(kLstmB)]);

  Matrix dh = upstream;
  Matrix dc = Matrix::Zero(H, B);
  Matrix d_gates(4 * H, B);
  for (std::size_t t = arch.steps; t-- > 0;) {
    const Matrix& g = trace.gates[t];
    const Matrix& c = trace.cell[t];
    for (Eigen::Index s = 0; s < B; ++s) {
      for (Eigen::Index r = 0; r < H; ++r) {
        const double i = g(r, s), f = g(H + r, s), cand = g(2 * H + r, s), o = g(3 * H + r, s);
        const double tc = std::tanh(c(r, s));
        const double c_prev = t > 0 ? trace.cell[t - 1](r, s) : 0.0;
        const double d_o = dh(r, s) * tc;
        const double d_c = dc(r, s) + dh(r, s) * o * (1.0 - tc * tc);
        d_gates(r, s) = d_c * cand * i * (1.0 - i);
        d_gates(H + r, s) = d_c * c_prev * f * (1.0 - f);
        d_gates(2 * H + r, s) = d_c * i * (1.0 - cand * cand);
        d_gates(3 * H + r, s) = d_o * o * (1.0 - o);
        dc(r, s) = d_c * f;
      }
    }
    g_wx.matrix() += d_gates * trace.x[t].transpose();
    if (t > 0) g_wh.matrix() += d_gates * trace.hidden[t - 1].transpose();
    g_b += d_gates.rowwise().sum();
    if (want_input_grad) {
      const Matrix dx = wx.transpose() * d_gates;
      for (Eigen::Index s = 0; s < B; ++s) {
        result.input_grads[std::size_t(s)].row(Eigen::Index(t)) = dx.col(s).transpose();
      }
    }
    dh = wh.transpose() * d_gates;
  }
  return result;
}

Gradients Backward(const ModelParams& params, const ForwardTrace& trace, const Matrix& targets,
                   std::span<const double> task_weights, std::span<const double> sample_weights) {
  if (targets.rows() != trace.outputs.rows() || targets.cols() != trace.outputs.cols()) {
    throw Error(ErrorCode::kStaleTrace, "targets do not match the trace's outputs");
  }
  const Matrix logit_grad = LossGradient(trace.outputs, targets, task_weights, sample_weights);
  return BackwardFromLogits(params, trace, logit_grad).grads;
}

AdamState MakeAdamState(const ModelParams& params) {
  AdamState state;
  for (const auto& t : params.tensors) {
    state.m.emplace_back(t.tensor.shape);
    state.v.emplace_back(t.tensor.shape);
  }
  return state;
}

void AdamStep(ModelParams& params, const Gradients& grads, AdamState& state, double lr) {
  if (grads.size() != params.tensors.size() || state.m.size() != params.tensors.size()) {
    throw Error(ErrorCode::kShapeMismatch, "gradients/optimizer state do not match parameters");
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    auto& w = params.tensors[k].tensor.data;
    const auto& g = grads[k].data;
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    if (g.size() != w.size()) throw Error(ErrorCode::kShapeMismatch, "gradient size mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
    }
  }
}

McEstimate McForward(const ModelParams& params, const Tensor& input, std::size_t passes, double keep_rate,
                     Rng& rng) {
  if (passes == 0) throw Error(ErrorCode::kInvalidInput, "need at least one Monte-Carlo pass");
  const Architecture arch = InferArchitecture(params);
  return McForward(params, input, SampleMask(arch, passes, keep_rate, rng));
}

McEstimate McForward(const ModelParams& params, const Tensor& input, const DropoutMask& masks) {
  const Architecture arch = InferArchitecture(params);
  if (input.shape != std::vector<std::size_t>{arch.steps, arch.features}) {
    throw Error(ErrorCode::kShapeMismatch, "input tensor shape does not match the model");
  }
  const auto passes = static_cast<std::size_t>(masks.trunk.cols());
  if (passes == 0) throw Error(ErrorCode::kInvalidInput, "need at least one Monte-Carlo pass");
  const BatchInput batch(passes, std::span<const double>(input.data));
  const ForwardTrace tr = Forward(params, batch, &masks);
  return SummarizePasses(tr.outputs, 0, passes);
}

McEstimate SummarizePasses(const Matrix& outputs, Eigen::Index first_col, std::size_t passes) {
  McEstimate est;
  for (Eigen::Index k = 0; k < outputs.rows(); ++k) {
    // Welford: identical passes give exactly zero variance.
    double mean = 0.0, m2 = 0.0;
    for (std::size_t t = 0; t < passes; ++t) {
      const double x = outputs(k, first_col + Eigen::Index(t));
      const double d = x - mean;
      mean += d / static_cast<double>(t + 1);
      m2 += d * (x - mean);
    }
    est.mean.push_back(mean);
    est.variance.push_back(m2 / static_cast<double>(passes));
  }
  return est;
}

Tensor InputGradient(const ModelParams& params, const Tensor& input, std::size_t head) {
  const ForwardTrace tr = Forward(params, input);
  if (head >= std::size_t(tr.logits.rows())) {
    throw Error(ErrorCode::kShapeMismatch, "head index out of range");
  }
  Matrix seed = Matrix::Zero(tr.logits.rows(), 1);
  seed(Eigen::Index(head), 0) = 1.0;
  const auto back = BackwardFromLogits(params, tr, seed, true);
  Tensor out({tr.arch.steps, tr.arch.features});
  out.matrix() = back.input_grads.front();
  return out;
}

}  // namespace fairmtl::nnet
