#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>

#include "support.hpp"

using namespace crossctx;
using testing_support::trial;

namespace {

// Direct O(N^2) DFT power of one Hann-windowed frame, bins 0..N/2.
std::vector<double> dft_power(const std::vector<double>& x, std::size_t start, int n) {
  std::vector<double> out(static_cast<std::size_t>(n / 2 + 1));
  for (int k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
      acc += x[start + static_cast<std::size_t>(i)] * w *
             std::polar(1.0, -2.0 * std::numbers::pi * k * i / n);
    }
    out[static_cast<std::size_t>(k)] = std::norm(acc);
  }
  return out;
}

// Triangular mel filter weight at frequency f, written out independently.
double filter_weight(double f, int band, int n_mels, double sr) {
  auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double step = mel(sr / 2) / (n_mels + 1);
  const double lo = hz(step * band), mid = hz(step * (band + 1)), hi = hz(step * (band + 2));
  if (f > lo && f <= mid) return (f - lo) / (mid - lo);
  if (f > mid && f < hi) return (hi - f) / (hi - mid);
  return 0.0;
}

AudioRecording sine(double hz, double seconds, double sr = 16000.0) {
  AudioRecording r;
  r.sample_rate = sr;
  const auto n = static_cast<std::size_t>(seconds * sr);
  for (std::size_t i = 0; i < n; ++i)
    r.samples.push_back(std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sr));
  return r;
}

}  // namespace

TEST_CASE("silent 1 s clip gives an all-zero 60x30 spectrogram", "[featurize]") {
  AudioRecording rec;
  rec.samples.assign(16000, 0.0);
  const auto spec = mel_spectrogram(rec, 1024, 512, 60);
  REQUIRE(spec.bands() == 60);
  REQUIRE(spec.frames() == 30);
  REQUIRE(spec.values.isZero(0.0));
  const auto f = audio_features(rec);
  REQUIRE(f.size() == 100);
  REQUIRE(f.isZero(0.0));
}

TEST_CASE("mel spectrogram matches a brute-force DFT oracle", "[featurize]") {
  Catch::Generators::RandomFloatingGenerator<double> gen(-1.0, 1.0, 99);
  AudioRecording rec;
  for (int i = 0; i < 3000; ++i) {
    rec.samples.push_back(gen.get());
    gen.next();
  }
  const int n = 256, hop = 128, mels = 20;
  const auto spec = mel_spectrogram(rec, n, hop, mels);
  REQUIRE(spec.frames() == (3000 - n) / hop + 1);
  for (Eigen::Index f = 0; f < spec.frames(); f += 5) {
    const auto p = dft_power(rec.samples, static_cast<std::size_t>(f * hop), n);
    for (int b = 0; b < mels; ++b) {
      double expect = 0.0;
      for (int k = 0; k <= n / 2; ++k)
        expect += filter_weight(16000.0 * k / n, b, mels, 16000.0) * p[static_cast<std::size_t>(k)];
      REQUIRE(spec.values(b, f) == Catch::Approx(expect).epsilon(1e-9).margin(1e-9));
    }
  }
}

TEST_CASE("440 Hz sine concentrates energy in its mel band", "[featurize]") {
  const auto spec = mel_spectrogram(sine(440.0, 1.0), 1024, 512, 60);
  const Eigen::VectorXd band_mean = spec.values.rowwise().mean();
  Eigen::Index peak = 0;
  band_mean.maxCoeff(&peak);
  // The band whose triangle has the largest response at 440 Hz.
  int expected = 0;
  double best = -1.0;
  for (int b = 0; b < 60; ++b) {
    const double w = filter_weight(440.0, b, 60, 16000.0);
    if (w > best) best = w, expected = b;
  }
  REQUIRE(peak == expected);
  // Filters overlap by half, so the neighbour that also covers 440 Hz gets a
  // comparable share; every band beyond it is at least 10x weaker.
  for (Eigen::Index b = 0; b < 60; ++b) {
    if (std::abs(b - peak) <= 1) continue;
    REQUIRE(band_mean[peak] >= 10.0 * band_mean[b]);
  }
}

TEST_CASE("spectro-temporal histogram", "[featurize]") {
  MelSpectrogram constant{Eigen::MatrixXd::Constant(60, 30, 3.5)};
  const auto h = spectro_temporal_histogram(constant, 10, 10);
  REQUIRE(h.size() == 100);
  REQUIRE(h == Eigen::VectorXd::Constant(100, 3.5));

  MelSpectrogram one{Eigen::MatrixXd::Zero(60, 30)};
  one.values(0, 0) = 7.2;
  const auto g = spectro_temporal_histogram(one, 10, 10);
  REQUIRE(g[0] == 7.2 / 18.0);
  for (Eigen::Index i = 1; i < 100; ++i) REQUIRE(g[i] == 0.0);

  // Brute-force binning oracle on a random spectrogram with a remainder.
  Catch::Generators::RandomFloatingGenerator<double> gen(0.0, 5.0, 3);
  MelSpectrogram r{Eigen::MatrixXd(23, 17)};
  for (Eigen::Index j = 0; j < 17; ++j)
    for (Eigen::Index i = 0; i < 23; ++i) {
      r.values(i, j) = gen.get();
      gen.next();
    }
  const auto q = spectro_temporal_histogram(r, 4, 3);
  for (int fb = 0; fb < 4; ++fb)
    for (int tb = 0; tb < 3; ++tb) {
      const int r0 = fb * 5, r1 = fb == 3 ? 23 : r0 + 5;
      const int c0 = tb * 5, c1 = tb == 2 ? 17 : c0 + 5;
      double sum = 0.0;
      for (int i = r0; i < r1; ++i)
        for (int j = c0; j < c1; ++j) sum += r.values(i, j);
      REQUIRE(q[fb * 3 + tb] == Catch::Approx(sum / ((r1 - r0) * (c1 - c0))).epsilon(1e-14));
    }
  REQUIRE_THROWS_AS(spectro_temporal_histogram(MelSpectrogram{Eigen::MatrixXd::Zero(5, 30)}),
                    DataError);
}

TEST_CASE("temporal binning", "[featurize]") {
  MultiChannelSeries effort;
  effort.channels.assign(6, std::vector<double>(237, 1.0));
  const auto e = temporal_bin(effort, 10);
  REQUIRE(e.size() == 60);
  REQUIRE(e == Eigen::VectorXd::Ones(60));

  MultiChannelSeries force;
  force.channels.assign(3, std::vector<double>(50, 0.0));
  REQUIRE(temporal_bin(force, 10).size() == 30);

  MultiChannelSeries ramp;
  ramp.channels = {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
  REQUIRE(temporal_bin(ramp, 10) == Eigen::VectorXd::LinSpaced(10, 0, 9));

  MultiChannelSeries ragged;
  ragged.channels = {{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, {1, 2}};
  REQUIRE_THROWS_AS(temporal_bin(ragged, 10), DataError);
  MultiChannelSeries shortseries;
  shortseries.channels = {{1, 2, 3}};
  REQUIRE_THROWS_AS(temporal_bin(shortseries, 10), DataError);
}

TEST_CASE("augmentation of identical trials gives exact copies", "[featurize]") {
  std::vector<TrialFeature> trials;
  Eigen::VectorXd v(4);
  v << 0.1, -3.7, 1e-9, 42.0;
  for (int i = 0; i < 10; ++i) trials.push_back(trial("salt", i, v));
  const auto out = augment_object_trials(trials, 10, 5);
  REQUIRE(out.size() == 10);
  for (std::size_t i = 0; i < out.size(); ++i) {
    REQUIRE(out[i].values == v);
    REQUIRE(out[i].provenance == Provenance::augmented);
    REQUIRE(out[i].trial_index == static_cast<int>(10 + i));
    REQUIRE(out[i].object == "salt");
  }
  REQUIRE(trials.size() + out.size() == 20);
}

TEST_CASE("augmentation sample mean stays within 4 standard errors", "[featurize]") {
  crossctx::Rng rng(17);
  std::vector<TrialFeature> trials;
  for (int i = 0; i < 10; ++i) trials.push_back(trial("salt", i, testing_support::random_vector(rng, 30)));
  const auto out = augment_object_trials(trials, 10000, 8);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(30), sq = Eigen::VectorXd::Zero(30);
  for (const auto& t : trials) mean += t.values / 10.0;
  for (const auto& t : trials) sq += (t.values - mean).cwiseAbs2() / 9.0;
  Eigen::VectorXd sample = Eigen::VectorXd::Zero(30);
  for (const auto& t : out) sample += t.values / 10000.0;
  for (Eigen::Index d = 0; d < 30; ++d)
    REQUIRE(std::abs(sample[d] - mean[d]) <= 4.0 * std::sqrt(sq[d]) / 100.0);
}

TEST_CASE("augmentation preconditions and determinism", "[featurize]") {
  std::vector<TrialFeature> one{trial("salt", 0, Eigen::VectorXd::Zero(2))};
  REQUIRE_THROWS_AS(augment_object_trials(one, 3, 1), DataError);
  std::vector<TrialFeature> mixed{trial("salt", 0, Eigen::VectorXd::Zero(2)),
                                  trial("water", 1, Eigen::VectorXd::Zero(2))};
  REQUIRE_THROWS_AS(augment_object_trials(mixed, 3, 1), DataError);
  crossctx::Rng rng(4);
  std::vector<TrialFeature> trials;
  for (int i = 0; i < 5; ++i) trials.push_back(trial("salt", i, testing_support::random_vector(rng, 6)));
  REQUIRE(augment_object_trials(trials, 7, 9) == augment_object_trials(trials, 7, 9));
  REQUIRE_FALSE(augment_object_trials(trials, 7, 9) == augment_object_trials(trials, 7, 10));
  REQUIRE(augment_object_trials(trials, 2, 9, 50).front().trial_index == 50);
}

TEST_CASE("raw tree featurization", "[featurize]") {
  const auto dir = testing_support::scratch_dir("raw_tree");
  const ToolBehavior tb{Tool::metal_whisk, Behavior::stirring_fast};
  AudioRecording silent;
  silent.samples.assign(16000, 0.0);
  MultiChannelSeries effort, force;
  effort.rate = force.rate = 100.0;
  effort.channels.assign(6, std::vector<double>(120, 1.0));
  force.channels.assign(3, std::vector<double>(120, 2.0));
  for (const char* o : {"salt", "water"})
    for (int i = 0; i < 2; ++i) write_raw_trial(dir, tb, o, i, silent, effort, force);
  const Dataset ds = featurize_raw_tree(dir);
  REQUIRE(ds.objects() == std::vector<std::string>{"salt", "water"});
  REQUIRE(ds.contexts().size() == 3);
  for (const auto& c : ds.contexts())
    for (const auto& o : ds.objects())
      for (const auto& t : ds.trials(c, o)) {
        REQUIRE(t.values.size() == c.dim());
        const double expect = c.modality == Modality::audio ? 0.0
                              : c.modality == Modality::effort ? 1.0 : 2.0;
        REQUIRE(t.values == Eigen::VectorXd::Constant(c.dim(), expect));
      }

  std::filesystem::remove(dir / "metal-whisk/stirring-fast/salt/trial-1/force.csv");
  std::filesystem::remove(dir / "metal-whisk/stirring-fast/water/trial-0/force.csv");
  try {
    featurize_raw_tree(dir);
    FAIL("expected a raw tree error");
  } catch (const RawTreeError& e) {
    REQUIRE(e.problems().size() == 2);
    REQUIRE(e.problems()[0].find("salt/trial-1/force.csv") != std::string::npos);
    REQUIRE(e.problems()[1].find("water/trial-0/force.csv") != std::string::npos);
  }
}
