#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "savc/tensorio.hpp"

// Synthetic corpora with known factors. Units are a per-channel affine
// speaker transform of a speaker-free base sequence, so instance
// normalization removes speaker identity exactly; mel frames are a fixed
// squashing of the same factors followed by a speaker-dependent affine map.
namespace savc::syndata {

struct SynthSpec {
  int n_speakers = 10;
  int n_emotions = 5;
  int utterances_per_pair = 40;
  int frames = 64;  // W
  int unit_channels = 16;  // C
  int mel_channels = 20;  // M
  std::uint64_t seed = 1234;
  std::pair<double, double> speaker_scale_range{0.8, 1.25};
  std::pair<double, double> speaker_shift_range{-0.5, 0.5};

  void validate() const;
  // Number of latent content channels mixed into the units.
  int content_channels() const { return std::max(2, unit_channels / 2); }
};

// Fixed mixing matrices. Fully determined by (seed, C, M, content dims).
struct RenderRecipe {
  std::uint64_t seed = 0;
  int unit_channels = 0;
  int mel_channels = 0;
  int content_channels = 0;

  Mat unit_mix;     // C x Cb
  Vec unit_pitch;   // C
  Vec unit_energy;  // C
  Mat mel_mix;      // M x Cb
  Vec mel_pitch;    // M, spectral tilt ramp
  Vec mel_energy;   // M
  Mat mel_shift;    // M x C, maps speaker_mu to mel offsets
  Mat mel_scale;    // M x C, maps log speaker_sigma to log mel scales

  static RenderRecipe make(std::uint64_t seed, int unit_channels, int mel_channels, int content_channels);
};

struct FactorSet {
  std::uint64_t recipe_seed = 0;
  int unit_channels = 0;
  int mel_channels = 0;
  Mat content;          // W x Cb
  Vec speaker_mu;       // C
  Vec speaker_sigma;    // C, > 0
  Vec f0;               // W, log-scale, 0 on unvoiced frames
  Vec voicing;          // W, 1 voiced / 0 unvoiced
  Vec energy;           // W, log-scale
  int emotion_id = 0;

  RenderRecipe recipe() const;
};

struct Rendered {
  Mat units;   // W x C
  Mat mel;     // W x M
  Vec f0;
  Vec energy;
};

// Log-f0 of voiced frames is stored relative to this reference inside the units.
inline constexpr double kLogF0Reference = 5.0;

Rendered render_utterance(const FactorSet& f);
Rendered render_utterance(const FactorSet& f, const RenderRecipe& recipe);

// Per-emotion contour family parameters.
struct EmotionStyle {
  double f0_offset;
  double f0_slope;
  double f0_cycles;
  double f0_amplitude;
  double energy_mean;
  double energy_slope;
  double energy_noise;
};
EmotionStyle emotion_style(int emotion_id, int n_emotions);

std::string speaker_name(int index);
std::string emotion_name(int index, int n_emotions);

// Per-speaker affine style drawn from the SynthSpec ranges.
std::pair<Vec, Vec> speaker_style(const SynthSpec& spec, int speaker);
FactorSet sample_factors(const SynthSpec& spec, int speaker, int emotion, int index);

// Writes tensors, factor files, and manifest.json under `dir`. Returns the
// manifest (already strict-validated). `jobs` > 1 renders in parallel; output
// bytes are independent of it.
Manifest make_corpus(const SynthSpec& spec, const std::filesystem::path& dir, int jobs = 1);

void save_factors(const std::filesystem::path& path, const FactorSet& f);
FactorSet load_factors(const std::filesystem::path& path);
FactorSet ground_truth(const Manifest& manifest, const UtteranceRecord& rec);

}  // namespace savc::syndata
