// Copyright 2026 The damer Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "damer/core/error.hpp"
#include "damer/features/audio.hpp"

namespace damer::features {

/// [rows x frames] row-major matrix of log energies.
struct Gram {
  std::size_t rows = 0;
  std::size_t frames = 0;
  std::vector<float> values;

  float at(std::size_t row, std::size_t frame) const { return values[row * frames + frame]; }
};

using MelGram = Gram;
using CochGram = Gram;

/// Both views of one track on the same frame grid.
struct FeaturePair {
  MelGram mel;
  CochGram coch;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Glasberg & Moore equivalent rectangular bandwidth.
inline double erb_hz(double fc) { return 24.7 * (4.37e-3 * fc + 1.0); }

/// Sparse row of a filterbank over FFT bins.
struct BandWeights {
  std::size_t first_bin = 0;
  std::vector<double> weights;
};

/// Triangular HTK-style Mel filters (unit peak) over the bins of an
/// `fft_size`-point transform.
inline std::vector<BandWeights> mel_filterbank(const FeatureConfig& cfg) {
  const std::size_t bins = cfg.fft_size() / 2 + 1;
  const double bin_hz = cfg.sample_rate / static_cast<double>(cfg.fft_size());
  const double lo = hz_to_mel(cfg.mel_fmin), hi = hz_to_mel(cfg.mel_fmax);
  std::vector<double> edges(cfg.mel_bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.mel_bands + 1));
  }
  std::vector<BandWeights> bank(cfg.mel_bands);
  for (std::size_t m = 0; m < cfg.mel_bands; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    const auto first = static_cast<std::size_t>(std::ceil(left / bin_hz));
    const auto last = std::min(bins - 1, static_cast<std::size_t>(std::floor(right / bin_hz)));
    bank[m].first_bin = first;
    for (std::size_t k = first; k <= last && first <= last; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double w = f <= centre ? (f - left) / (centre - left) : (right - f) / (right - centre);
      bank[m].weights.push_back(std::max(0.0, w));
    }
  }
  return bank;
}

/// Log-spaced gammatone centre frequencies over [coch_fmin, coch_fmax].
inline std::vector<double> gammatone_centres(const FeatureConfig& cfg) {
  std::vector<double> centres(cfg.coch_channels);
  const double ratio = cfg.coch_fmax / cfg.coch_fmin;
  for (std::size_t c = 0; c < centres.size(); ++c) {
    const double frac = centres.size() > 1 ? static_cast<double>(c) / static_cast<double>(centres.size() - 1) : 0.0;
    centres[c] = cfg.coch_fmin * std::pow(ratio, frac);
  }
  return centres;
}

/// Squared magnitude response of an order-n gammatone filter with unit gain
/// at its centre: (1 + ((f - fc) / b)^2)^-n, b = 1.019 ERB(fc).
inline double gammatone_power_response(double f, double fc, int order) {
  const double b = 1.019 * erb_hz(fc);
  const double x = (f - fc) / b;
  return std::pow(1.0 + x * x, -order);
}

/// Gammatone power responses sampled on the FFT bins. Tails below ~1e-16
/// (beyond 100 bandwidths) are dropped.
inline std::vector<BandWeights> gammatone_filterbank(const FeatureConfig& cfg) {
  const std::size_t bins = cfg.fft_size() / 2 + 1;
  const double bin_hz = cfg.sample_rate / static_cast<double>(cfg.fft_size());
  std::vector<BandWeights> bank;
  for (const double fc : gammatone_centres(cfg)) {
    const double reach = 100.0 * 1.019 * erb_hz(fc);
    const auto first = static_cast<std::size_t>(std::max(0.0, std::ceil((fc - reach) / bin_hz)));
    const auto last = std::min(bins - 1, static_cast<std::size_t>(std::floor((fc + reach) / bin_hz)));
    BandWeights band{first, {}};
    for (std::size_t k = first; k <= last; ++k) {
      band.weights.push_back(gammatone_power_response(static_cast<double>(k) * bin_hz, fc, cfg.gammatone_order));
    }
    bank.push_back(std::move(band));
  }
  return bank;
}

inline std::vector<double> hamming_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return w;
}

/// Zero-padded real FFT returning |X_k|^2 for k = 0..size/2.
class PowerSpectrum {
 public:
  explicit PowerSpectrum(std::size_t size) : size_(size) {
    in_ = fftw_alloc_real(size);
    out_ = fftw_alloc_complex(size / 2 + 1);
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(size), in_, out_, FFTW_ESTIMATE);
  }
  ~PowerSpectrum() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  PowerSpectrum(const PowerSpectrum&) = delete;
  PowerSpectrum& operator=(const PowerSpectrum&) = delete;

  /// `frame` shorter than the transform is zero-padded.
  void compute(std::span<const double> frame, std::vector<double>& power) {
    std::fill(in_, in_ + size_, 0.0);
    std::copy(frame.begin(), frame.end(), in_);
    fftw_execute(plan_);
    power.resize(size_ / 2 + 1);
    for (std::size_t k = 0; k < power.size(); ++k) power[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  std::size_t size_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

namespace detail {

inline double band_energy(const BandWeights& band, const std::vector<double>& power) {
  double total = 0.0;
  for (std::size_t i = 0; i < band.weights.size(); ++i) total += band.weights[i] * power[band.first_bin + i];
  return total;
}

/// Frames the pre-emphasised signal, windows it, and hands each frame's
/// power spectrum to `sink(frame_index, power)`.
template <typename Sink>
void for_each_frame_spectrum(std::span<const double> emphasised, const FeatureConfig& cfg, Sink&& sink) {
  const auto window = hamming_window(cfg.frame_len);
  PowerSpectrum fft(cfg.fft_size());
  std::vector<double> frame(cfg.frame_len);
  std::vector<double> power;
  const std::size_t frames = 1 + (emphasised.size() - cfg.frame_len) / cfg.hop;
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t start = t * cfg.hop;
    for (std::size_t i = 0; i < cfg.frame_len; ++i) frame[i] = emphasised[start + i] * window[i];
    fft.compute(frame, power);
    sink(t, power);
  }
}

inline void check_segment(const AudioSegment& seg, const FeatureConfig& cfg) {
  cfg.validate();
  if (seg.sample_rate != cfg.sample_rate) fail(ErrorKind::kBadSampleRate, "segment sample rate");
  if (cfg.frame_len > seg.samples.size()) fail(ErrorKind::kConfigError, "frame_len exceeds segment length");
}

}  // namespace detail

/// Mel and cochleagram views from one pre-emphasis pass and one shared set
/// of windowed frame spectra.
inline FeaturePair extract_features(const AudioSegment& seg, const FeatureConfig& cfg = {}, bool want_mel = true,
                                    bool want_coch = true) {
  detail::check_segment(seg, cfg);
  const auto emphasised = pre_emphasis(seg.samples, cfg.pre_emphasis);
  const std::size_t frames = 1 + (emphasised.size() - cfg.frame_len) / cfg.hop;
  const auto mel_bank = want_mel ? mel_filterbank(cfg) : std::vector<BandWeights>{};
  const auto coch_bank = want_coch ? gammatone_filterbank(cfg) : std::vector<BandWeights>{};

  FeaturePair pair;
  pair.mel = {mel_bank.size(), frames, std::vector<float>(mel_bank.size() * frames)};
  pair.coch = {coch_bank.size(), frames, std::vector<float>(coch_bank.size() * frames)};
  detail::for_each_frame_spectrum(emphasised, cfg, [&](std::size_t t, const std::vector<double>& power) {
    for (std::size_t m = 0; m < mel_bank.size(); ++m) {
      const double e = detail::band_energy(mel_bank[m], power);
      pair.mel.values[m * frames + t] = static_cast<float>(std::log(std::max(e, cfg.log_floor)));
    }
    for (std::size_t c = 0; c < coch_bank.size(); ++c) {
      const double e = detail::band_energy(coch_bank[c], power);
      const double compressed = std::pow(std::max(e, cfg.log_floor), cfg.coch_power);
      pair.coch.values[c * frames + t] = static_cast<float>(std::log10(compressed));
    }
  });
  return pair;
}

/// Natural-log Mel band energies, [mel_bands x frames].
inline MelGram mel_spectrogram(const AudioSegment& seg, const FeatureConfig& cfg = {}) {
  return extract_features(seg, cfg, true, false).mel;
}

/// log10 of power-law compressed gammatone frame energies,
/// [coch_channels x frames].
inline CochGram cochleagram(const AudioSegment& seg, const FeatureConfig& cfg = {}) {
  return extract_features(seg, cfg, false, true).coch;
}

}  // namespace damer::features
