#pragma once

// Fixed-length features from raw recordings: mel spectrogram -> 10x10
// spectro-temporal histogram for audio, per-channel temporal binning for
// effort and force, and per-object Gaussian resampling for augmentation.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include "crossctx/data_model.hpp"
#include "crossctx/errors.hpp"
#include "crossctx/rng.hpp"

namespace crossctx {

struct AudioRecording {
  std::vector<double> samples;
  double sample_rate = 16000.0;
};

/// channels[c][k] is sample k of channel c; all channels share one length.
struct MultiChannelSeries {
  std::vector<std::vector<double>> channels;
  double rate = 0.0;

  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
};

/// bands x frames, non-negative.
struct MelSpectrogram {
  Eigen::MatrixXd values;

  Eigen::Index bands() const { return values.rows(); }
  Eigen::Index frames() const { return values.cols(); }
};

struct FeatureConfig {
  int fft_len = 1024;
  int hop = 512;
  int n_mels = 60;
  int freq_bins = 10;
  int time_bins = 10;
  /// Histogram over 10*log10(power + 1e-10) instead of linear power.
  bool log_power = false;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Periodic Hann window.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(n));
  return w;
}

/// Triangular filters with peak 1, edges equally spaced on the mel scale
/// between 0 Hz and Nyquist. Shape n_mels x (fft_len/2 + 1).
inline Eigen::MatrixXd mel_filterbank(double sample_rate, int fft_len, int n_mels) {
  if (sample_rate <= 0.0 || fft_len < 2 || n_mels < 1)
    throw ConfigError("crossctx::mel_filterbank: invalid parameters");
  const int n_bins = fft_len / 2 + 1;
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = sample_rate * k / static_cast<double>(fft_len);
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb(m, k) = w;
    }
  }
  return fb;
}

/// Power mel spectrogram; Hann-windowed frames without padding, so
/// frames = floor((len - fft_len) / hop) + 1.
inline MelSpectrogram mel_spectrogram(const AudioRecording& rec, int fft_len = 1024,
                                      int hop = 512, int n_mels = 60) {
  if (rec.sample_rate <= 0.0)
    throw ConfigError("crossctx::mel_spectrogram: sample rate must be positive");
  if (fft_len < 2 || hop < 1 || n_mels < 1)
    throw ConfigError("crossctx::mel_spectrogram: invalid framing parameters");
  if (rec.samples.size() < static_cast<std::size_t>(fft_len))
    throw DataError("crossctx::mel_spectrogram: recording of " +
                    std::to_string(rec.samples.size()) + " samples is shorter than one " +
                    std::to_string(fft_len) + "-sample window");

  const std::size_t frames = (rec.samples.size() - static_cast<std::size_t>(fft_len)) /
                                 static_cast<std::size_t>(hop) + 1;
  const int n_bins = fft_len / 2 + 1;
  const auto window = hann_window(fft_len);
  const Eigen::MatrixXd fb = mel_filterbank(rec.sample_rate, fft_len, n_mels);

  Eigen::MatrixXd power(n_bins, static_cast<Eigen::Index>(frames));
  Eigen::FFT<double> engine;
  std::vector<double> frame(static_cast<std::size_t>(fft_len));
  std::vector<std::complex<double>> spectrum;
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t start = f * static_cast<std::size_t>(hop);
    for (std::size_t i = 0; i < frame.size(); ++i)
      frame[i] = rec.samples[start + i] * window[i];
    engine.fwd(spectrum, frame);
    for (int k = 0; k < n_bins; ++k)
      power(k, static_cast<Eigen::Index>(f)) = std::norm(spectrum[static_cast<std::size_t>(k)]);
  }
  return MelSpectrogram{fb * power};
}

namespace detail {
/// Index ranges of `bins` equal bins over n cells; the remainder goes to the
/// last bin.
inline std::vector<std::pair<Eigen::Index, Eigen::Index>> equal_bins(Eigen::Index n,
                                                                     int bins) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  const Eigen::Index size = n / bins;
  for (int b = 0; b < bins; ++b) {
    const Eigen::Index start = b * size;
    const Eigen::Index stop = (b == bins - 1) ? n : start + size;
    out.emplace_back(start, stop);
  }
  return out;
}
}  // namespace detail

/// Mean of each (frequency bin, time bin) block, frequency-major:
/// entry fb * time_bins + tb.
inline Eigen::VectorXd spectro_temporal_histogram(const MelSpectrogram& spec, int freq_bins = 10,
                                                  int time_bins = 10) {
  if (freq_bins < 1 || time_bins < 1)
    throw ConfigError("crossctx::spectro_temporal_histogram: bin counts must be positive");
  if (spec.bands() < freq_bins || spec.frames() < time_bins)
    throw DataError("crossctx::spectro_temporal_histogram: spectrogram " +
                    std::to_string(spec.bands()) + "x" + std::to_string(spec.frames()) +
                    " too small for " + std::to_string(freq_bins) + "x" +
                    std::to_string(time_bins) + " bins");
  const auto fr = detail::equal_bins(spec.bands(), freq_bins);
  const auto tr = detail::equal_bins(spec.frames(), time_bins);
  Eigen::VectorXd out(freq_bins * time_bins);
  for (int f = 0; f < freq_bins; ++f) {
    for (int t = 0; t < time_bins; ++t) {
      const auto [r0, r1] = fr[static_cast<std::size_t>(f)];
      const auto [c0, c1] = tr[static_cast<std::size_t>(t)];
      out[f * time_bins + t] = spec.values.block(r0, c0, r1 - r0, c1 - c0).mean();
    }
  }
  return out;
}

/// Per-channel mean over equal time bins, channel-major.
inline Eigen::VectorXd temporal_bin(const MultiChannelSeries& series, int time_bins = 10) {
  if (time_bins < 1) throw ConfigError("crossctx::temporal_bin: time_bins must be positive");
  if (series.channels.empty()) throw DataError("crossctx::temporal_bin: series has no channels");
  const std::size_t len = series.length();
  for (const auto& ch : series.channels)
    if (ch.size() != len) throw DataError("crossctx::temporal_bin: channel lengths differ");
  if (len < static_cast<std::size_t>(time_bins))
    throw DataError("crossctx::temporal_bin: series of " + std::to_string(len) +
                    " samples is shorter than " + std::to_string(time_bins) + " bins");
  const auto ranges = detail::equal_bins(static_cast<Eigen::Index>(len), time_bins);
  Eigen::VectorXd out(static_cast<Eigen::Index>(series.channels.size()) * time_bins);
  for (std::size_t c = 0; c < series.channels.size(); ++c) {
    const auto& ch = series.channels[c];
    for (int b = 0; b < time_bins; ++b) {
      const auto [s, e] = ranges[static_cast<std::size_t>(b)];
      double sum = 0.0;
      for (Eigen::Index k = s; k < e; ++k) sum += ch[static_cast<std::size_t>(k)];
      out[static_cast<Eigen::Index>(c) * time_bins + b] = sum / static_cast<double>(e - s);
    }
  }
  return out;
}

inline Eigen::VectorXd audio_features(const AudioRecording& rec, const FeatureConfig& cfg = {}) {
  MelSpectrogram spec = mel_spectrogram(rec, cfg.fft_len, cfg.hop, cfg.n_mels);
  if (cfg.log_power) spec.values = (10.0 * (spec.values.array() + 1e-10).log10()).matrix();
  return spectro_temporal_histogram(spec, cfg.freq_bins, cfg.time_bins);
}

/// Per-dimension mean and sample standard deviation (n - 1 denominator). The
/// mean is accumulated as offsets from the first trial so identical inputs give
/// their own value back bit-exactly.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> trial_moments(
    const std::vector<TrialFeature>& trials) {
  const auto& ref = trials.front().values;
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(ref.size());
  for (const auto& t : trials) offset += t.values - ref;
  const double n = static_cast<double>(trials.size());
  Eigen::VectorXd mean = ref + offset / n;
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(ref.size());
  for (const auto& t : trials) ss += (t.values - mean).cwiseAbs2();
  return {mean, (ss / (n - 1.0)).cwiseSqrt()};
}

/// Draws n_new trials with each dimension independently normal around the
/// per-dimension mean and sample std of the inputs. New trial indices start at
/// first_index, or after the largest input index when first_index < 0.
inline std::vector<TrialFeature> augment_object_trials(const std::vector<TrialFeature>& trials,
                                                       int n_new, std::uint64_t seed,
                                                       int first_index = -1) {
  if (trials.size() < 2)
    throw DataError("crossctx::augment_object_trials: need at least 2 trials, got " +
                    std::to_string(trials.size()));
  if (n_new < 0) throw ConfigError("crossctx::augment_object_trials: n_new must be >= 0");
  const auto& object = trials.front().object;
  int next_index = 0;
  for (const auto& t : trials) {
    if (t.object != object)
      throw DataError("crossctx::augment_object_trials: trials of several objects given");
    if (t.values.size() != trials.front().values.size())
      throw DataError("crossctx::augment_object_trials: trial dimensions differ");
    next_index = std::max(next_index, t.trial_index + 1);
  }
  if (first_index >= 0) next_index = first_index;
  const auto [mean, sd] = trial_moments(trials);

  Rng rng(derive_seed(seed, {fnv1a64("augment"), fnv1a64(object)}));
  std::vector<TrialFeature> out;
  out.reserve(static_cast<std::size_t>(n_new));
  for (int i = 0; i < n_new; ++i) {
    TrialFeature t;
    t.object = object;
    t.trial_index = next_index + i;
    t.provenance = Provenance::augmented;
    t.values.resize(mean.size());
    for (Eigen::Index d = 0; d < mean.size(); ++d) t.values[d] = mean[d] + sd[d] * rng.normal();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace crossctx
