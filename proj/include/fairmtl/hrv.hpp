#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace fairmtl::hrv {

inline constexpr std::size_t kNumFeatures = 25;

// Column order used everywhere a feature vector is laid out (CSV headers,
// window matrices, saliency maps).
inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "mean_nni", "sdnn",   "sdsd",        "nni_50",  "pnni_50", "nni_20",     "pnni_20",
    "rmssd",    "median_nni", "range_nni", "cvsd",  "cvnni",   "mean_hr",    "max_hr",
    "min_hr",   "std_hr", "lf",          "hf",      "lf_hf_ratio", "lfnu",   "hfnu",
    "total_power", "vlf", "csi",         "cvi"};

enum Feature : std::size_t {
  kMeanNni, kSdnn, kSdsd, kNni50, kPnni50, kNni20, kPnni20, kRmssd, kMedianNni, kRangeNni,
  kCvsd, kCvnni, kMeanHr, kMaxHr, kMinHr, kStdHr, kLf, kHf, kLfHfRatio, kLfnu, kHfnu,
  kTotalPower, kVlf, kCsi, kCvi,
};

struct EcgSignal {
  std::vector<double> samples;
  double sample_rate = 250.0;
};

struct NNIntervalSeries {
  std::vector<double> intervals_ms;
};

struct FeatureVector {
  std::array<double, kNumFeatures> values{};
  // vlf band holds fewer than two PSD bins, so vlf (and total_power) are
  // computed but not physically resolved.
  bool frequency_undefined = false;
  // SD1 or SD2 is zero; csi/cvi emitted as 0.
  bool poincare_degenerate = false;
  // hf == 0 or lf + hf == 0; ratio/normalized units emitted as 0.
  bool spectral_degenerate = false;

  double operator[](Feature f) const { return values[f]; }
};

struct PeakDetectorOptions {
  double band_low_hz = 5.0;
  double band_high_hz = 15.0;
  double integration_window_s = 0.150;
  double refractory_s = 0.250;
  double threshold_fraction = 0.5;
  double min_interval_ms = 250.0;
  double max_interval_ms = 3000.0;
};

// Sample indices of detected R peaks.
std::vector<std::size_t> DetectRPeakIndices(const EcgSignal& signal,
                                            const PeakDetectorOptions& options = {});

// Successive R-R differences in ms, with out-of-range intervals dropped.
// Throws kNoPeaks when fewer than two peaks are found.
NNIntervalSeries DetectRPeaks(const EcgSignal& signal, const PeakDetectorOptions& options = {});

struct SpectrumOptions {
  double interpolation_hz = 4.0;
  std::size_t segment_length = 256;
  double vlf_low = 0.003;
  double vlf_high = 0.04;
  double lf_high = 0.15;
  double hf_high = 0.40;
};

struct Psd {
  std::vector<double> frequencies;
  std::vector<double> power;
};

// Not-a-knot cubic spline evaluated at `query` points (x must be strictly
// increasing). Falls back to a parabola for 3 knots and a line for 2.
std::vector<double> CubicSplineInterpolate(std::span<const double> x, std::span<const double> y,
                                           std::span<const double> query);

// Averaged Hann-windowed periodogram with 50% overlap and per-segment mean
// removal, one-sided density scaling.
Psd WelchPsd(std::span<const double> signal, double sample_rate, std::size_t segment_length);

// Resamples the tachogram onto a uniform grid and returns its PSD.
Psd TachogramPsd(const NNIntervalSeries& nni, const SpectrumOptions& options = {});

// Trapezoidal integral of the PSD over bins with low <= f < high.
double BandPower(const Psd& psd, double low, double high);

FeatureVector ExtractFeatures(const NNIntervalSeries& nni, const SpectrumOptions& options = {});

}  // namespace fairmtl::hrv
