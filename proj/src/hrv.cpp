#include "fairmtl/hrv.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>

#include "fairmtl/error.hpp"

namespace fairmtl::hrv {
namespace {

// Centered moving average; the window shrinks at the edges.
std::vector<double> CenteredMovingAverage(std::span<const double> x, std::size_t width) {
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  const std::size_t half = width / 2;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + half + 1);
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

// Shifted by the first value so a constant input returns that value exactly.
double Mean(std::span<const double> x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  double d = 0.0;
  for (double v : x) d += v - x.front();
  return x.front() + d / static_cast<double>(x.size());
}

double SampleStd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double mu = Mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double Median(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  return n % 2 == 1 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& PlannerMutex() {
  static std::mutex m;
  return m;
}

// |rfft(x)|^2 for bins 0..n/2.
std::vector<double> PowerSpectrum(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  const int bins = n / 2 + 1;
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;
  {
    std::lock_guard lock(PlannerMutex());
    in = fftw_alloc_real(static_cast<std::size_t>(n));
    out = fftw_alloc_complex(static_cast<std::size_t>(bins));
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  std::copy(x.begin(), x.end(), in);
  fftw_execute(plan);
  std::vector<double> power(static_cast<std::size_t>(bins));
  for (int k = 0; k < bins; ++k) power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
  {
    std::lock_guard lock(PlannerMutex());
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  return power;
}

}  // namespace

std::vector<std::size_t> DetectRPeakIndices(const EcgSignal& signal,
                                            const PeakDetectorOptions& options) {
  const double fs = signal.sample_rate;
  if (!(fs > 0.0)) throw Error(ErrorCode::kInvalidInput, "sample_rate must be positive");
  if (static_cast<double>(signal.samples.size()) < 2.0 * fs) {
    throw Error(ErrorCode::kInvalidInput, "ECG signal shorter than 2 seconds");
  }
  const std::span<const double> x(signal.samples);
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  if (!(*hi_it > *lo_it)) return {};
  const auto width = [fs](double seconds) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(seconds * fs)));
  };

  // Band-pass as the difference of two moving averages whose first nulls sit
  // near the upper and lower band edges.
  const auto smooth = CenteredMovingAverage(x, width(0.5 / options.band_high_hz));
  const auto baseline = CenteredMovingAverage(x, width(1.0 / options.band_low_hz));
  const std::size_t n = x.size();
  std::vector<double> band(n), detrended(n);
  for (std::size_t i = 0; i < n; ++i) {
    band[i] = smooth[i] - baseline[i];
    detrended[i] = x[i] - baseline[i];
  }

  std::vector<double> energy(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double d = 0.5 * (band[i + 1] - band[i - 1]);
    energy[i] = d * d;
  }
  const auto integrated = CenteredMovingAverage(energy, width(options.integration_window_s));

  const std::size_t refractory = width(options.refractory_s);
  const std::size_t warmup = std::min(n, width(2.0));
  double running_peak = *std::max_element(integrated.begin(), integrated.begin() + warmup);
  if (!(running_peak > 0.0)) running_peak = *std::max_element(integrated.begin(), integrated.end());

  std::vector<std::size_t> accepted;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double v = integrated[i];
    if (!(v > 0.0) || v <= integrated[i - 1] || v < integrated[i + 1]) continue;
    if (v <= options.threshold_fraction * running_peak) continue;
    if (!accepted.empty() && i - accepted.back() < refractory) {
      if (v > integrated[accepted.back()]) accepted.back() = i;
      continue;
    }
    accepted.push_back(i);
    running_peak = 0.875 * running_peak + 0.125 * v;
  }

  // Snap each detection to the largest deflection of the baseline-removed
  // signal nearby; the integrator smears the QRS over its window.
  const std::size_t search = width(0.1);
  std::vector<std::size_t> peaks;
  peaks.reserve(accepted.size());
  for (std::size_t idx : accepted) {
    const std::size_t lo = idx >= search ? idx - search : 0;
    const std::size_t hi = std::min(n, idx + search + 1);
    const auto it = std::max_element(detrended.begin() + lo, detrended.begin() + hi);
    const auto best = static_cast<std::size_t>(it - detrended.begin());
    if (peaks.empty() || best != peaks.back()) peaks.push_back(best);
  }
  return peaks;
}

NNIntervalSeries DetectRPeaks(const EcgSignal& signal, const PeakDetectorOptions& options) {
  const auto peaks = DetectRPeakIndices(signal, options);
  if (peaks.size() < 2) throw Error(ErrorCode::kNoPeaks, "fewer than 2 R peaks detected");
  NNIntervalSeries out;
  for (std::size_t i = 1; i < peaks.size(); ++i) {
    const double ms = static_cast<double>(peaks[i] - peaks[i - 1]) * 1000.0 / signal.sample_rate;
    if (ms >= options.min_interval_ms && ms <= options.max_interval_ms) {
      out.intervals_ms.push_back(ms);
    }
  }
  return out;
}

std::vector<double> CubicSplineInterpolate(std::span<const double> x, std::span<const double> y,
                                           std::span<const double> query) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) {
    throw Error(ErrorCode::kInvalidInput, "spline needs at least two aligned knots");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (!(x[i] > x[i - 1])) throw Error(ErrorCode::kInvalidInput, "knots must increase");
  }
  std::vector<double> h(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) h[i] = x[i + 1] - x[i];

  // Second derivatives at the knots.
  std::vector<double> m(n, 0.0);
  if (n == 3) {
    // Not-a-knot with three knots degenerates to the interpolating parabola.
    const double s0 = (y[1] - y[0]) / h[0];
    const double s1 = (y[2] - y[1]) / h[1];
    const double curvature = 2.0 * (s1 - s0) / (h[0] + h[1]);
    std::fill(m.begin(), m.end(), curvature);
  } else if (n >= 4) {
    // Interior equations i = 1..n-2 with M_0 and M_{n-1} eliminated through
    // the third-derivative continuity at x_1 and x_{n-2}; tridiagonal solve.
    const std::size_t k = n - 2;
    std::vector<double> sub(k, 0.0), diag(k), sup(k, 0.0), rhs(k);
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t i = r + 1;
      sub[r] = h[i - 1];
      diag[r] = 2.0 * (h[i - 1] + h[i]);
      sup[r] = h[i];
      rhs[r] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
    }
    {
      const double h0 = h[0], h1 = h[1];
      diag[0] = (h0 + h1) * (2.0 + h0 / h1);
      sup[0] = h1 - h0 * h0 / h1;
      sub[0] = 0.0;
    }
    {
      const double ha = h[n - 3], hb = h[n - 2];
      diag[k - 1] = (ha + hb) * (2.0 + hb / ha);
      sub[k - 1] = ha - hb * hb / ha;
      sup[k - 1] = 0.0;
    }
    for (std::size_t r = 1; r < k; ++r) {
      const double w = sub[r] / diag[r - 1];
      diag[r] -= w * sup[r - 1];
      rhs[r] -= w * rhs[r - 1];
    }
    std::vector<double> sol(k);
    sol[k - 1] = rhs[k - 1] / diag[k - 1];
    for (std::size_t r = k - 1; r-- > 0;) sol[r] = (rhs[r] - sup[r] * sol[r + 1]) / diag[r];
    for (std::size_t r = 0; r < k; ++r) m[r + 1] = sol[r];
    m[0] = ((h[0] + h[1]) * m[1] - h[0] * m[2]) / h[1];
    m[n - 1] = ((h[n - 3] + h[n - 2]) * m[n - 2] - h[n - 2] * m[n - 3]) / h[n - 3];
  }

  std::vector<double> out(query.size());
  for (std::size_t q = 0; q < query.size(); ++q) {
    const double t = query[q];
    auto it = std::upper_bound(x.begin(), x.end(), t);
    std::size_t seg = it == x.begin() ? 0 : static_cast<std::size_t>(it - x.begin()) - 1;
    seg = std::min(seg, n - 2);
    const double hs = h[seg];
    const double dt = t - x[seg];
    const double b = (y[seg + 1] - y[seg]) / hs - hs * (2.0 * m[seg] + m[seg + 1]) / 6.0;
    const double c = 0.5 * m[seg];
    const double d = (m[seg + 1] - m[seg]) / (6.0 * hs);
    out[q] = y[seg] + dt * (b + dt * (c + dt * d));
  }
  return out;
}

Psd WelchPsd(std::span<const double> signal, double sample_rate, std::size_t segment_length) {
  Psd psd;
  const std::size_t n = signal.size();
  const std::size_t seg = std::min(segment_length, n);
  if (seg < 2) return psd;
  const std::size_t step = seg - seg / 2;
  const std::size_t count = (n - seg) / step + 1;

  std::vector<double> window(seg);
  double window_energy = 0.0;
  for (std::size_t i = 0; i < seg; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(seg));
    window_energy += window[i] * window[i];
  }
  const double scale = 1.0 / (sample_rate * window_energy);
  const std::size_t bins = seg / 2 + 1;
  psd.power.assign(bins, 0.0);
  std::vector<double> buf(seg);
  for (std::size_t s = 0; s < count; ++s) {
    const auto part = signal.subspan(s * step, seg);
    const double mu = Mean(part);
    for (std::size_t i = 0; i < seg; ++i) buf[i] = (part[i] - mu) * window[i];
    const auto power = PowerSpectrum(buf);
    for (std::size_t k = 0; k < bins; ++k) psd.power[k] += power[k];
  }
  for (std::size_t k = 0; k < bins; ++k) {
    double v = psd.power[k] * scale / static_cast<double>(count);
    const bool nyquist = seg % 2 == 0 && k == bins - 1;
    if (k != 0 && !nyquist) v *= 2.0;
    psd.power[k] = v;
  }
  psd.frequencies.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    psd.frequencies[k] = static_cast<double>(k) * sample_rate / static_cast<double>(seg);
  }
  return psd;
}

Psd TachogramPsd(const NNIntervalSeries& nni, const SpectrumOptions& options) {
  const auto& rr = nni.intervals_ms;
  std::vector<double> t(rr.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < rr.size(); ++i) {
    acc += rr[i];
    t[i] = acc / 1000.0;
  }
  const double t0 = t.front();
  for (double& v : t) v -= t0;

  const double dt = 1.0 / options.interpolation_hz;
  std::vector<double> grid;
  for (std::size_t k = 0;; ++k) {
    const double g = static_cast<double>(k) * dt;
    if (!(g < t.back())) break;
    grid.push_back(g);
  }
  if (grid.size() < 2) return {};
  auto resampled = CubicSplineInterpolate(t, rr, grid);
  const double mu = Mean(resampled);
  for (double& v : resampled) v -= mu;
  return WelchPsd(resampled, options.interpolation_hz, options.segment_length);
}

double BandPower(const Psd& psd, double low, double high) {
  double total = 0.0;
  bool have_prev = false;
  double prev_f = 0.0, prev_p = 0.0;
  for (std::size_t k = 0; k < psd.frequencies.size(); ++k) {
    const double f = psd.frequencies[k];
    if (!(f >= low && f < high)) continue;
    if (have_prev) total += 0.5 * (psd.power[k] + prev_p) * (f - prev_f);
    prev_f = f;
    prev_p = psd.power[k];
    have_prev = true;
  }
  return total;
}

FeatureVector ExtractFeatures(const NNIntervalSeries& nni, const SpectrumOptions& options) {
  const auto& rr = nni.intervals_ms;
  if (rr.size() < 2) {
    throw Error(ErrorCode::kTooFewIntervals, "need at least 2 NN intervals");
  }
  for (double v : rr) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::kInvalidInput, "NN intervals must be positive and finite");
    }
  }
  const std::size_t n = rr.size();
  std::vector<double> diffs(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) diffs[i] = rr[i + 1] - rr[i];

  FeatureVector fv;
  auto& v = fv.values;
  v[kMeanNni] = Mean(rr);
  v[kSdnn] = SampleStd(rr);
  v[kSdsd] = SampleStd(diffs);
  double nn50 = 0.0, nn20 = 0.0, sq = 0.0;
  for (double d : diffs) {
    if (std::abs(d) > 50.0) nn50 += 1.0;
    if (std::abs(d) > 20.0) nn20 += 1.0;
    sq += d * d;
  }
  v[kNni50] = nn50;
  v[kPnni50] = 100.0 * nn50 / static_cast<double>(n - 1);
  v[kNni20] = nn20;
  v[kPnni20] = 100.0 * nn20 / static_cast<double>(n - 1);
  v[kRmssd] = std::sqrt(sq / static_cast<double>(n - 1));
  v[kMedianNni] = Median(rr);
  const auto [lo, hi] = std::minmax_element(rr.begin(), rr.end());
  v[kRangeNni] = *hi - *lo;
  v[kCvsd] = v[kRmssd] / v[kMeanNni];
  v[kCvnni] = v[kSdnn] / v[kMeanNni];

  std::vector<double> hr(n);
  for (std::size_t i = 0; i < n; ++i) hr[i] = 60000.0 / rr[i];
  v[kMeanHr] = Mean(hr);
  v[kMaxHr] = *std::max_element(hr.begin(), hr.end());
  v[kMinHr] = *std::min_element(hr.begin(), hr.end());
  v[kStdHr] = SampleStd(hr);

  const Psd psd = TachogramPsd(nni, options);
  const double vlf = BandPower(psd, options.vlf_low, options.vlf_high);
  const double lf = BandPower(psd, options.vlf_high, options.lf_high);
  const double hf = BandPower(psd, options.lf_high, options.hf_high);
  std::size_t vlf_bins = 0;
  for (double f : psd.frequencies) {
    if (f >= options.vlf_low && f < options.vlf_high) ++vlf_bins;
  }
  fv.frequency_undefined = vlf_bins < 2;
  v[kLf] = lf;
  v[kHf] = hf;
  v[kVlf] = vlf;
  v[kTotalPower] = vlf + lf + hf;
  if (hf > 0.0) {
    v[kLfHfRatio] = lf / hf;
  } else {
    fv.spectral_degenerate = true;
  }
  if (lf + hf > 0.0) {
    v[kLfnu] = 100.0 * lf / (lf + hf);
    v[kHfnu] = 100.0 * hf / (lf + hf);
  } else {
    fv.spectral_degenerate = true;
  }

  const double sd1 = v[kSdsd] / std::numbers::sqrt2;
  const double sd2 = std::sqrt(std::max(0.0, 2.0 * v[kSdnn] * v[kSdnn] - 0.5 * v[kSdsd] * v[kSdsd]));
  const double longitudinal = 4.0 * sd2;
  const double transverse = 4.0 * sd1;
  if (transverse > 0.0 && longitudinal > 0.0) {
    v[kCsi] = longitudinal / transverse;
    v[kCvi] = std::log10(longitudinal * transverse);
  } else {
    fv.poincare_degenerate = true;
  }
  return fv;
}

}  // namespace fairmtl::hrv
