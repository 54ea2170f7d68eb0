#include "savc/nets.hpp"

#include <algorithm>
#include <cmath>

#include "savc/error.hpp"
#include "savc/kmeans.hpp"

namespace savc {

void EncoderConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ValidationError(std::string("model.") + name + " must be positive");
  };
  positive(unit_channels, "unit_channels");
  positive(conv_blocks, "conv_blocks");
  positive(conv_channels, "conv_channels");
  positive(gru_hidden, "gru_hidden");
  positive(d_content, "d_content");
  positive(d_prosody, "d_prosody");
  positive(d_speaker, "d_speaker");
  positive(n_style_tokens, "n_style_tokens");
  positive(n_emotions, "n_emotions");
  positive(mel_channels, "mel_channels");
  if (kernel < 1 || kernel % 2 == 0) throw ValidationError("model.kernel must be a positive odd integer");
  if (dilations.empty()) throw ValidationError("model.dilations must not be empty");
  for (int d : dilations)
    if (d < 1) throw ValidationError("model.dilations must be positive");
  if (d_content + d_prosody >= 2 * gru_hidden)
    throw ValidationError("model: d_content + d_prosody must be smaller than 2 * gru_hidden");
  if (gru_hidden < 2 || conv_channels < 2)
    throw ValidationError("model: gru_hidden and conv_channels must be >= 2 (teacher runs at half width)");
  if (quantize_centroids < 0) throw ValidationError("model.quantize_centroids must be >= 0");
}

std::vector<int> EncoderConfig::block_dilations() const {
  std::vector<int> out;
  for (int i = 0; i < conv_blocks; ++i) out.push_back(dilations[static_cast<std::size_t>(i) % dilations.size()]);
  return out;
}

// ---------------------------------------------------------------------------

AttributeEncoder::AttributeEncoder(const EncoderConfig& cfg, CounterRng& rng)
    : kernel_(cfg.kernel),
      trunk_(cfg.unit_channels, cfg.conv_channels, cfg.kernel, cfg.block_dilations(), cfg.gru_hidden, rng),
      head_content_(2 * cfg.gru_hidden, cfg.d_content, rng),
      head_prosody_(2 * cfg.gru_hidden, cfg.d_prosody, rng) {}

AttributeEncoder::Output AttributeEncoder::forward(const Mat& units, Cache* cache) const {
  if (!units.allFinite()) throw ValidationError("attr_encode: non-finite units");
  if (units.rows() < kernel_)
    throw ValidationError("attr_encode: " + std::to_string(units.rows()) + " frames is shorter than the kernel");
  Mat features = trunk_.forward(units, cache ? &cache->trunk : nullptr);
  Output out{head_content_.forward(features), head_prosody_.forward(features)};
  if (cache) cache->features = std::move(features);
  return out;
}

Mat AttributeEncoder::backward(const Cache& cache, const Mat& d_content, const Mat& d_prosody) {
  Mat d_features = head_content_.backward(cache.features, d_content);
  d_features += head_prosody_.backward(cache.features, d_prosody);
  return trunk_.backward(cache.trunk, d_features);
}

void AttributeEncoder::zero_heads() {
  head_content_.zero_init();
  head_prosody_.zero_init();
}

void AttributeEncoder::collect(const std::string& prefix, nn::ParamList& out) {
  trunk_.collect(prefix + ".trunk", out);
  head_content_.collect(prefix + ".head_content", out);
  head_prosody_.collect(prefix + ".head_prosody", out);
}

// ---------------------------------------------------------------------------

Mat prosody_features(const Vec& f0, const Vec& voicing, const Vec& energy) {
  const auto w = f0.size();
  if (voicing.size() != w || energy.size() != w)
    throw ValidationError("teacher inputs must share one length (f0 " + std::to_string(w) + ", voicing " +
                          std::to_string(voicing.size()) + ", energy " + std::to_string(energy.size()) + ")");
  double n = 0, sum = 0, sq = 0;
  for (Eigen::Index t = 0; t < w; ++t) {
    if (voicing(t) > 0) {
      n += 1;
      sum += f0(t);
    }
  }
  const double mean = n > 0 ? sum / n : 0.0;
  for (Eigen::Index t = 0; t < w; ++t)
    if (voicing(t) > 0) sq += (f0(t) - mean) * (f0(t) - mean);
  double sd = n > 1 ? std::sqrt(sq / n) : 0.0;
  if (sd < 1e-6) sd = 1.0;
  Mat x(w, 3);
  for (Eigen::Index t = 0; t < w; ++t) {
    x(t, 0) = voicing(t) > 0 ? (f0(t) - mean) / sd : 0.0;
    x(t, 1) = voicing(t) > 0 ? 1.0 : 0.0;
    x(t, 2) = energy(t);
  }
  return x;
}

namespace {
int teacher_width(int v) { return std::max(1, v / 2); }
}  // namespace

TeacherEncoder::TeacherEncoder(const EncoderConfig& cfg, CounterRng& rng)
    : kernel_(cfg.kernel),
      trunk_(3, teacher_width(cfg.conv_channels), cfg.kernel, cfg.block_dilations(), teacher_width(cfg.gru_hidden),
             rng) {
  const int feat = 2 * teacher_width(cfg.gru_hidden);
  const int d_token = feat;
  query_ = nn::Linear(feat, d_token, rng);
  frame_proj_ = nn::Linear(feat, cfg.d_prosody, rng);
  readout_proj_ = nn::Linear(d_token, cfg.d_prosody, rng);
  tokens_ = nn::Param(cfg.n_style_tokens, d_token);
  nn::init_uniform(tokens_, 1, rng);
}

Mat TeacherEncoder::forward(const Vec& f0, const Vec& voicing, const Vec& energy, Cache* cache) const {
  Mat input = prosody_features(f0, voicing, energy);
  if (input.rows() < kernel_) throw ValidationError("teacher_encode: contour shorter than the kernel");
  Cache local;
  Cache& c = cache ? *cache : local;
  c.features = trunk_.forward(input, &c.trunk);
  const int half = static_cast<int>(c.features.cols() / 2);
  c.final_state = nn::BiGru::final_state(c.features, half);
  c.query = query_.forward(c.final_state.transpose()).row(0).transpose();

  const double scale = 1.0 / std::sqrt(static_cast<double>(tokens_.value.cols()));
  Vec scores = tokens_.value * c.query * scale;
  scores.array() -= scores.maxCoeff();
  c.attention = scores.array().exp();
  c.attention /= c.attention.sum();
  c.readout = tokens_.value.transpose() * c.attention;

  Mat out = frame_proj_.forward(c.features);
  out.rowwise() += readout_proj_.forward(c.readout.transpose()).row(0);
  c.input = std::move(input);
  return out;
}

void TeacherEncoder::backward(const Cache& c, const Mat& d_out) {
  Mat d_features = frame_proj_.backward(c.features, d_out);
  const Mat d_readout_row = readout_proj_.backward(c.readout.transpose(), d_out.colwise().sum());
  const Vec d_readout = d_readout_row.row(0).transpose();

  const double scale = 1.0 / std::sqrt(static_cast<double>(tokens_.value.cols()));
  // values path
  tokens_.grad.noalias() += c.attention * d_readout.transpose();
  // softmax path
  const Vec d_att = tokens_.value * d_readout;
  const double avg = c.attention.dot(d_att);
  const Vec d_scores = c.attention.cwiseProduct((d_att.array() - avg).matrix());
  tokens_.grad.noalias() += d_scores * c.query.transpose() * scale;
  const Vec d_query = tokens_.value.transpose() * d_scores * scale;

  const Mat d_final_row = query_.backward(c.final_state.transpose(), d_query.transpose());
  const int half = static_cast<int>(c.features.cols() / 2);
  nn::BiGru::add_final_state_grad(d_features, d_final_row.row(0).transpose(), half);
  trunk_.backward(c.trunk, d_features);
}

void TeacherEncoder::collect(const std::string& prefix, nn::ParamList& out) {
  trunk_.collect(prefix + ".trunk", out);
  query_.collect(prefix + ".query", out);
  frame_proj_.collect(prefix + ".frame_proj", out);
  readout_proj_.collect(prefix + ".readout_proj", out);
  out.emplace_back(prefix + ".style_tokens", &tokens_);
}

// ---------------------------------------------------------------------------

Decoder::Decoder(const EncoderConfig& cfg, CounterRng& rng)
    : d_content_(cfg.d_content),
      d_prosody_(cfg.d_prosody),
      d_speaker_(cfg.d_speaker),
      trunk_(cfg.d_content + cfg.d_prosody + cfg.d_speaker, cfg.conv_channels, cfg.kernel, cfg.block_dilations(),
             cfg.gru_hidden, rng),
      out_(2 * cfg.gru_hidden, cfg.mel_channels, rng) {}

Mat Decoder::forward(const Mat& content, const Mat& prosody, const Vec& speaker, Cache* cache) const {
  if (content.cols() != d_content_ || prosody.cols() != d_prosody_ || speaker.size() != d_speaker_)
    throw ValidationError("decode: input widths do not match the model config");
  if (content.rows() != prosody.rows()) throw ValidationError("decode: content and prosody are not frame-aligned");
  if (!speaker.allFinite()) throw ValidationError("decode: non-finite speaker embedding");
  const auto w = content.rows();
  Mat input(w, d_content_ + d_prosody_ + d_speaker_);
  input.leftCols(d_content_) = content;
  input.middleCols(d_content_, d_prosody_) = prosody;
  input.rightCols(d_speaker_) = speaker.transpose().replicate(w, 1);
  Mat features = trunk_.forward(input, cache ? &cache->trunk : nullptr);
  Mat mel = out_.forward(features);
  if (cache) {
    cache->input = std::move(input);
    cache->features = std::move(features);
  }
  return mel;
}

Decoder::Grads Decoder::backward(const Cache& cache, const Mat& d_mel) {
  const Mat d_features = out_.backward(cache.features, d_mel);
  const Mat d_input = trunk_.backward(cache.trunk, d_features);
  return {d_input.leftCols(d_content_), d_input.middleCols(d_content_, d_prosody_),
          d_input.rightCols(d_speaker_).colwise().sum().transpose()};
}

void Decoder::zero_output() { out_.zero_init(); }

void Decoder::collect(const std::string& prefix, nn::ParamList& out) {
  trunk_.collect(prefix + ".trunk", out);
  out_.collect(prefix + ".out", out);
}

// ---------------------------------------------------------------------------

SpeakerTable::SpeakerTable(std::vector<std::string> names, int dim, CounterRng& rng)
    : names_(std::move(names)), table_(static_cast<Eigen::Index>(names_.size()), dim) {
  nn::init_uniform(table_, 1, rng);
}

int SpeakerTable::index_of(const std::string& speaker) const {
  auto it = std::find(names_.begin(), names_.end(), speaker);
  return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
}

bool SpeakerTable::contains(const std::string& speaker) const {
  return index_of(speaker) >= 0 || imported_.count(speaker) > 0;
}

Vec SpeakerTable::embed(const std::string& speaker) const {
  if (int i = index_of(speaker); i >= 0) return table_.value.row(i).transpose();
  if (auto it = imported_.find(speaker); it != imported_.end()) return it->second;
  throw ValidationError("unknown speaker '" + speaker + "' (zero-shot targets need an imported embedding)");
}

void SpeakerTable::import_embedding(const std::string& speaker, const Vec& v) {
  if (v.size() != dim())
    throw ValidationError("imported embedding for '" + speaker + "' has dim " + std::to_string(v.size()) +
                          ", expected " + std::to_string(dim()));
  if (!v.allFinite()) throw ValidationError("imported embedding is not finite");
  imported_[speaker] = v;
}

void SpeakerTable::accumulate_grad(int index, const Vec& g) { table_.grad.row(index) += g.transpose(); }

void SpeakerTable::collect(const std::string& prefix, nn::ParamList& out) { out.emplace_back(prefix + ".table", &table_); }

// ---------------------------------------------------------------------------

EmotionHead::EmotionHead(int d_in, int classes, CounterRng& rng) : linear_(d_in, classes, rng) {}

Vec EmotionHead::forward(const Mat& z) const {
  if (!z.allFinite()) throw ValidationError("emotion_predict: non-finite input");
  const Mat pooled = z.colwise().mean();
  return linear_.forward(pooled).row(0).transpose();
}

Mat EmotionHead::backward(const Mat& z, const Vec& dy) {
  const Mat pooled = z.colwise().mean();
  const Mat d_pooled = linear_.backward(pooled, dy.transpose());
  return d_pooled.replicate(z.rows(), 1) / static_cast<double>(z.rows());
}

void EmotionHead::zero_init() { linear_.zero_init(); }

void EmotionHead::collect(const std::string& prefix, nn::ParamList& out) { linear_.collect(prefix, out); }

// ---------------------------------------------------------------------------

SavcModel::SavcModel(const EncoderConfig& cfg, std::vector<std::string> speaker_names,
                     std::vector<std::string> emotions, std::uint64_t seed)
    : cfg_(cfg), emotions_(std::move(emotions)) {
  cfg_.validate();
  if (static_cast<int>(emotions_.size()) != cfg_.n_emotions)
    throw ValidationError("model.n_emotions = " + std::to_string(cfg_.n_emotions) + " but the corpus has " +
                          std::to_string(emotions_.size()) + " emotion labels");
  auto stream = [seed](const char* name) { return CounterRng(hash_words({seed, hash_string(name)})); };
  auto r_enc = stream("encoder");
  auto r_teacher = stream("teacher");
  auto r_dec = stream("decoder");
  auto r_spk = stream("speakers");
  auto r_heads = stream("heads");
  encoder = AttributeEncoder(cfg_, r_enc);
  teacher = TeacherEncoder(cfg_, r_teacher);
  decoder = Decoder(cfg_, r_dec);
  speakers = SpeakerTable(std::move(speaker_names), cfg_.d_speaker, r_spk);
  student_head = EmotionHead(cfg_.d_prosody, cfg_.n_emotions, r_heads);
  teacher_head = EmotionHead(cfg_.d_prosody, cfg_.n_emotions, r_heads);
  contour_head = nn::Linear(cfg_.d_prosody, 2, r_heads);
  const auto init = asa::PerturbParams::initial(cfg_.unit_channels);
  asa_i_mu = nn::Param(cfg_.unit_channels, 1);
  asa_i_sigma = nn::Param(cfg_.unit_channels, 1);
  asa_i_mu.value.col(0) = init.i_mu;
  asa_i_sigma.value.col(0) = init.i_sigma;
  if (cfg_.quantize_centroids > 0) centroids = nn::Param(cfg_.quantize_centroids, cfg_.unit_channels);
}

asa::PerturbParams SavcModel::perturb_params(asa::PerturbMode mode, double grl_lambda) const {
  asa::PerturbParams p = asa::PerturbParams::initial(cfg_.unit_channels, mode, grl_lambda);
  p.i_mu = asa_i_mu.value.col(0);
  p.i_sigma = asa_i_sigma.value.col(0);
  return p;
}

nn::ParamList SavcModel::teacher_params() {
  nn::ParamList out;
  teacher.collect("teacher", out);
  teacher_head.collect("teacher_head", out);
  contour_head.collect("contour_head", out);
  return out;
}

nn::ParamList SavcModel::student_params() {
  nn::ParamList out;
  encoder.collect("encoder", out);
  decoder.collect("decoder", out);
  speakers.collect("speakers", out);
  student_head.collect("student_head", out);
  return out;
}

nn::ParamList SavcModel::asa_params() {
  return {{"asa.i_mu", &asa_i_mu}, {"asa.i_sigma", &asa_i_sigma}};
}

nn::ParamList SavcModel::all_params() {
  auto out = teacher_params();
  for (auto& p : student_params()) out.push_back(p);
  for (auto& p : asa_params()) out.push_back(p);
  if (cfg_.quantize_centroids > 0) out.emplace_back("quantizer.centroids", &centroids);
  return out;
}

Mat SavcModel::prepare_units(const Mat& units) const {
  if (cfg_.quantize_centroids <= 0) return units;
  return quantize_rows(units, centroids.value);
}

}  // namespace savc
