#include "savc/syndata.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numbers>
#include <thread>

#include <json.hpp>

#include "savc/error.hpp"
#include "savc/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace savc::syndata {

void SynthSpec::validate() const {
  if (n_speakers < 2) throw ValidationError("n_speakers must be >= 2");
  if (n_emotions < 1) throw ValidationError("n_emotions must be >= 1");
  if (utterances_per_pair < 1) throw ValidationError("utterances_per_pair must be >= 1");
  if (frames < 8) throw ValidationError("frames (W) must be >= 8");
  if (unit_channels < 4) throw ValidationError("unit channels (C) must be >= 4");
  if (mel_channels < 4) throw ValidationError("mel channels (M) must be >= 4");
  if (!(speaker_scale_range.first < speaker_scale_range.second) || speaker_scale_range.first <= 0)
    throw ValidationError("speaker scale range must satisfy 0 < lo < hi");
  if (!(speaker_shift_range.first < speaker_shift_range.second))
    throw ValidationError("speaker shift range must satisfy lo < hi");
}

RenderRecipe RenderRecipe::make(std::uint64_t seed, int c, int m, int cb) {
  RenderRecipe r;
  r.seed = seed;
  r.unit_channels = c;
  r.mel_channels = m;
  r.content_channels = cb;
  CounterRng rng(hash_words({seed, hash_string("recipe"), std::uint64_t(c), std::uint64_t(m), std::uint64_t(cb)}));
  auto gaussian = [&](int rows, int cols, double scale) {
    Mat a(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) a(i, j) = scale * rng.normal();
    return a;
  };
  r.unit_mix = gaussian(c, cb, 1.0 / std::sqrt(double(cb)));
  r.unit_pitch.resize(c);
  r.unit_energy.resize(c);
  for (int i = 0; i < c; ++i) r.unit_pitch(i) = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < c; ++i) r.unit_energy(i) = rng.uniform(-1.0, 1.0);
  r.mel_mix = gaussian(m, cb, 1.0 / std::sqrt(double(cb)));
  r.mel_pitch.resize(m);
  for (int i = 0; i < m; ++i) r.mel_pitch(i) = 0.8 * (2.0 * i / (m - 1) - 1.0);
  r.mel_energy = Vec::Constant(m, 0.6);
  r.mel_shift = gaussian(m, c, 1.0 / std::sqrt(double(c)));
  r.mel_scale = gaussian(m, c, 1.0 / std::sqrt(double(c)));
  return r;
}

RenderRecipe FactorSet::recipe() const {
  return RenderRecipe::make(recipe_seed, unit_channels, mel_channels, static_cast<int>(content.cols()));
}

Rendered render_utterance(const FactorSet& f) { return render_utterance(f, f.recipe()); }

Rendered render_utterance(const FactorSet& f, const RenderRecipe& r) {
  const auto w = f.content.rows();
  if (f.content.cols() != r.content_channels || f.speaker_mu.size() != r.unit_channels ||
      f.speaker_sigma.size() != r.unit_channels || f.f0.size() != w || f.energy.size() != w ||
      f.voicing.size() != w) {
    throw ValidationError("factor set dimensions do not match the render recipe");
  }
  if ((f.speaker_sigma.array() <= 0).any()) throw ValidationError("speaker sigma must be positive");

  Vec f0_rel(w);
  for (Eigen::Index t = 0; t < w; ++t) f0_rel(t) = f.voicing(t) > 0 ? f.f0(t) - kLogF0Reference : 0.0;

  Mat base = f.content * r.unit_mix.transpose();
  base += f0_rel * r.unit_pitch.transpose();
  base += f.energy * r.unit_energy.transpose();

  Rendered out;
  out.units = (base.array().rowwise() * f.speaker_sigma.transpose().array()).matrix();
  out.units.rowwise() += f.speaker_mu.transpose();

  Mat pre = f.content * r.mel_mix.transpose();
  pre += f0_rel * r.mel_pitch.transpose();
  pre += f.energy * r.mel_energy.transpose();
  const Vec mel_mu = r.mel_shift * f.speaker_mu;
  const Vec mel_sigma = (r.mel_scale * f.speaker_sigma.array().log().matrix()).array().exp().matrix();
  out.mel = (pre.array().tanh().rowwise() * mel_sigma.transpose().array()).matrix();
  out.mel.rowwise() += mel_mu.transpose();

  out.f0 = f.f0;
  out.energy = f.energy;
  return out;
}

EmotionStyle emotion_style(int e, int k) {
  const double phase = 2.0 * std::numbers::pi * e / std::max(k, 1);
  return {
      .f0_offset = 0.1 * e - 0.2,
      .f0_slope = 0.6 * std::cos(phase),
      .f0_cycles = 1.0 + e,
      .f0_amplitude = 0.08 + 0.04 * (e % 3),
      .energy_mean = -0.8 + 0.4 * e,
      .energy_slope = 0.8 * std::sin(phase),
      .energy_noise = 0.15,
  };
}

std::string speaker_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "spk%02d", index);
  return buf;
}

std::string emotion_name(int index, int n_emotions) {
  static const char* kFive[] = {"neutral", "happy", "angry", "sad", "surprise"};
  if (n_emotions == 5) return kFive[index];
  return "emo" + std::to_string(index);
}

std::pair<Vec, Vec> speaker_style(const SynthSpec& spec, int speaker) {
  CounterRng rng(hash_words({spec.seed, hash_string("speaker"), std::uint64_t(speaker)}));
  Vec mu(spec.unit_channels), sigma(spec.unit_channels);
  for (int c = 0; c < spec.unit_channels; ++c)
    mu(c) = rng.uniform(spec.speaker_shift_range.first, spec.speaker_shift_range.second);
  for (int c = 0; c < spec.unit_channels; ++c)
    sigma(c) = rng.uniform(spec.speaker_scale_range.first, spec.speaker_scale_range.second);
  return {mu, sigma};
}

namespace {

// AR(1) walk with unit stationary variance.
Vec ar_walk(CounterRng& rng, Eigen::Index n, double rho) {
  Vec v(n);
  const double innov = std::sqrt(1.0 - rho * rho);
  v(0) = rng.normal();
  for (Eigen::Index t = 1; t < n; ++t) v(t) = rho * v(t - 1) + innov * rng.normal();
  return v;
}

}  // namespace

FactorSet sample_factors(const SynthSpec& spec, int speaker, int emotion, int index) {
  const int w = spec.frames;
  const int cb = spec.content_channels();
  CounterRng rng(hash_words({spec.seed, std::uint64_t(speaker), std::uint64_t(emotion), std::uint64_t(index)}));

  FactorSet f;
  f.recipe_seed = spec.seed;
  f.unit_channels = spec.unit_channels;
  f.mel_channels = spec.mel_channels;
  f.emotion_id = emotion;
  std::tie(f.speaker_mu, f.speaker_sigma) = speaker_style(spec, speaker);

  f.content.resize(w, cb);
  for (int j = 0; j < cb; ++j) f.content.col(j) = ar_walk(rng, w, 0.9);

  f.voicing.resize(w);
  bool voiced = rng.uniform() < 0.8;
  for (int t = 0; t < w; ++t) {
    f.voicing(t) = voiced ? 1.0 : 0.0;
    const double flip = voiced ? 0.06 : 0.3;
    if (rng.uniform() < flip) voiced = !voiced;
  }
  if (f.voicing.sum() < 2) f.voicing.setOnes();

  const auto style = emotion_style(emotion, spec.n_emotions);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Vec f0_walk = ar_walk(rng, w, 0.8);
  const Vec energy_walk = ar_walk(rng, w, 0.7);
  f.f0.resize(w);
  f.energy.resize(w);
  for (int t = 0; t < w; ++t) {
    const double pos = double(t) / (w - 1) - 0.5;
    const double log_f0 = kLogF0Reference + style.f0_offset + style.f0_slope * pos +
                          style.f0_amplitude * std::sin(2.0 * std::numbers::pi * style.f0_cycles * t / w + phase) +
                          0.05 * f0_walk(t);
    f.f0(t) = f.voicing(t) > 0 ? log_f0 : 0.0;
    f.energy(t) = style.energy_mean + style.energy_slope * pos + style.energy_noise * energy_walk(t);
  }
  return f;
}

namespace {

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_factors(const fs::path& path, const FactorSet& f) {
  json j;
  j["recipe_seed"] = f.recipe_seed;
  j["unit_channels"] = f.unit_channels;
  j["mel_channels"] = f.mel_channels;
  j["emotion_id"] = f.emotion_id;
  j["speaker_mu"] = vec_json(f.speaker_mu);
  j["speaker_sigma"] = vec_json(f.speaker_sigma);
  j["f0"] = vec_json(f.f0);
  j["voicing"] = vec_json(f.voicing);
  j["energy"] = vec_json(f.energy);
  json rows = json::array();
  for (Eigen::Index t = 0; t < f.content.rows(); ++t) rows.push_back(vec_json(f.content.row(t).transpose()));
  j["content"] = std::move(rows);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
}

FactorSet load_factors(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open factor file " + path.string());
  json j;
  try {
    j = json::parse(in);
    FactorSet f;
    f.recipe_seed = j.at("recipe_seed").get<std::uint64_t>();
    f.unit_channels = j.at("unit_channels").get<int>();
    f.mel_channels = j.at("mel_channels").get<int>();
    f.emotion_id = j.at("emotion_id").get<int>();
    f.speaker_mu = json_vec(j.at("speaker_mu"));
    f.speaker_sigma = json_vec(j.at("speaker_sigma"));
    f.f0 = json_vec(j.at("f0"));
    f.voicing = json_vec(j.at("voicing"));
    f.energy = json_vec(j.at("energy"));
    const auto& rows = j.at("content");
    const auto w = static_cast<Eigen::Index>(rows.size());
    const auto cb = w ? static_cast<Eigen::Index>(rows[0].size()) : 0;
    f.content.resize(w, cb);
    for (Eigen::Index t = 0; t < w; ++t) f.content.row(t) = json_vec(rows[t]).transpose();
    return f;
  } catch (const json::exception& e) {
    throw FormatError("malformed factor file " + path.string() + ": " + e.what());
  }
}

FactorSet ground_truth(const Manifest& m, const UtteranceRecord& rec) {
  if (!rec.factors_path) throw ValidationError("utterance '" + rec.id + "' has no ground truth factors");
  return load_factors(m.resolve(*rec.factors_path));
}

Manifest make_corpus(const SynthSpec& spec, const fs::path& dir, int jobs) {
  spec.validate();
  for (const char* sub : {"units", "mel", "f0", "energy", "factors"}) {
    std::error_code ec;
    fs::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }

  Manifest m;
  m.base_dir = dir;
  for (int e = 0; e < spec.n_emotions; ++e) m.emotions.push_back(emotion_name(e, spec.n_emotions));

  struct Job {
    int speaker, emotion, index;
  };
  std::vector<Job> work;
  for (int s = 0; s < spec.n_speakers; ++s)
    for (int e = 0; e < spec.n_emotions; ++e)
      for (int i = 0; i < spec.utterances_per_pair; ++i) {
        work.push_back({s, e, i});
        char id[64];
        std::snprintf(id, sizeof(id), "%s_%s_%04d", speaker_name(s).c_str(),
                      emotion_name(e, spec.n_emotions).c_str(), i);
        UtteranceRecord r;
        r.id = id;
        r.speaker = speaker_name(s);
        r.emotion = emotion_name(e, spec.n_emotions);
        r.units_path = fs::path("units") / (r.id + ".savt");
        r.mel_path = fs::path("mel") / (r.id + ".savt");
        r.f0_path = fs::path("f0") / (r.id + ".savt");
        r.energy_path = fs::path("energy") / (r.id + ".savt");
        r.factors_path = fs::path("factors") / (r.id + ".json");
        m.utterances.push_back(std::move(r));
      }

  const auto recipe = RenderRecipe::make(spec.seed, spec.unit_channels, spec.mel_channels, spec.content_channels());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= work.size()) return;
      try {
        const auto& job = work[k];
        const auto& rec = m.utterances[k];
        auto f = sample_factors(spec, job.speaker, job.emotion, job.index);
        auto out = render_utterance(f, recipe);
        write_tensor(dir / rec.units_path, FeatureTensor::from_matrix(out.units));
        write_tensor(dir / rec.mel_path, FeatureTensor::from_matrix(out.mel));
        write_tensor(dir / rec.f0_path, FeatureTensor::from_vector(out.f0));
        write_tensor(dir / rec.energy_path, FeatureTensor::from_vector(out.energy));
        save_factors(dir / *rec.factors_path, f);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = work.size();
        return;
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(work.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  save_manifest(dir / "manifest.json", m);
  return load_manifest(dir / "manifest.json", {.strict = true, .emotion_labels = {}});
}

}  // namespace savc::syndata
