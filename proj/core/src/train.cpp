#include "savc/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "savc/error.hpp"
#include "savc/kmeans.hpp"

namespace savc {

std::string to_string(AsaMode m) {
  switch (m) {
    case AsaMode::off: return "off";
    case AsaMode::literal: return "literal";
    case AsaMode::learned_scale: return "learned-scale";
    case AsaMode::fixed: return "fixed";
  }
  return "?";
}

AsaMode parse_asa_mode(const std::string& s) {
  if (s == "off") return AsaMode::off;
  if (s == "literal") return AsaMode::literal;
  if (s == "learned-scale") return AsaMode::learned_scale;
  if (s == "fixed") return AsaMode::fixed;
  throw ValidationError("unknown asa mode '" + s + "' (off|literal|learned-scale|fixed)");
}

void TrainConfig::validate() const {
  if (alpha < 0 || beta < 0 || lambda < 0 || cons_weight < 0 || contour_weight < 0)
    throw ValidationError("train: loss weights must be >= 0");
  if (batch_size < 2) throw ValidationError("train.batch_size must be >= 2");
  if (!(lr_teacher > 0) || !(lr_main > 0) || !(lr_head > 0)) throw ValidationError("train: learning rates must be positive");
  if (!(grad_clip > 0)) throw ValidationError("train.grad_clip must be positive");
  if (!(grl_lambda > 0)) throw ValidationError("train.grl_lambda must be positive");
  if (steps_teacher < 0 || steps_main < 0 || steps_finetune < 0) throw ValidationError("train: steps must be >= 0");
  if (lr_schedule != "constant" && lr_schedule != "linear")
    throw ValidationError("train.lr_schedule must be constant or linear");
  if (adversarial_window < 0) throw ValidationError("train.adversarial_window must be >= 0");
  if (holdout_every < 2) throw ValidationError("train.holdout_every must be >= 2");
}

namespace {

using Clock = std::chrono::steady_clock;

asa::PerturbMode perturb_mode(AsaMode m) {
  switch (m) {
    case AsaMode::literal: return asa::PerturbMode::literal;
    case AsaMode::fixed: return asa::PerturbMode::fixed;
    default: return asa::PerturbMode::learned_scale;
  }
}

std::vector<const Utterance*> sample_batch(const Dataset& data, int batch, CounterRng& rng) {
  if (static_cast<std::size_t>(batch) > data.items.size())
    throw ValidationError("batch size " + std::to_string(batch) + " exceeds the " +
                          std::to_string(data.items.size()) + " training utterances");
  std::vector<std::size_t> picked;
  while (picked.size() < static_cast<std::size_t>(batch)) {
    auto i = static_cast<std::size_t>(rng.below(data.items.size()));
    if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
  }
  std::vector<const Utterance*> out;
  for (auto i : picked) out.push_back(&data.items[i]);
  return out;
}

double scheduled_lr(const TrainConfig& cfg, double base, int step, int steps) {
  if (cfg.lr_schedule == "linear" && steps > 0) return base * (1.0 - static_cast<double>(step) / steps);
  return base;
}

struct Accumulator {
  LossTerms sum;
  void add(const LossTerms& t) {
    sum.rec += t.rec;
    sum.dis += t.dis;
    sum.pred += t.pred;
    sum.cons += t.cons;
  }
};

double mse(const Mat& a, const Mat& b) { return (a - b).squaredNorm() / static_cast<double>(a.size()); }

// Core of the student objective for one utterance. With `grad` false only the
// loss terms are computed.
LossTerms student_item(SavcModel& model, const Utterance& u, const Mat& clean_units, const Mat& input,
                       const TrainConfig& cfg, StudentObjective objective, bool grad, Mat* d_input) {
  const auto& mc = model.config();
  LossTerms terms;
  AttributeEncoder::Cache enc_cache;
  const auto enc = model.encoder.forward(input, grad ? &enc_cache : nullptr);
  const Mat prosody_in = mc.prosody_stream ? enc.prosody : Mat::Zero(enc.prosody.rows(), enc.prosody.cols());

  const int spk = model.speakers.index_of(u.speaker);
  if (spk < 0) throw ValidationError("speaker '" + u.speaker + "' is not in the model's speaker table");
  const Vec s = model.speakers.embed(u.speaker);

  Decoder::Cache dec_cache;
  const Mat mel_hat = model.decoder.forward(enc.content, prosody_in, s, grad ? &dec_cache : nullptr);
  terms.rec = loss_rec(mel_hat, u.mel);

  Mat d_content, d_prosody;
  if (grad) {
    auto g = model.decoder.backward(dec_cache, cfg.alpha * loss_rec_grad(mel_hat, u.mel));
    model.speakers.accumulate_grad(spk, g.speaker);
    d_content = std::move(g.content);
    d_prosody = mc.prosody_stream ? std::move(g.prosody) : Mat::Zero(enc.prosody.rows(), enc.prosody.cols());
  }

  const bool need_teacher = mc.prosody_stream || objective == StudentObjective::finetune;
  Mat z_teacher;
  if (need_teacher) z_teacher = model.teacher.forward(u.f0, u.voicing(), u.energy);
  if (mc.prosody_stream) {
    terms.dis = loss_dis(enc.prosody, z_teacher);
    if (grad && cfg.beta > 0) d_prosody += cfg.beta * loss_dis_grad(enc.prosody, z_teacher);
  }
  if (objective == StudentObjective::finetune) {
    const Vec y = one_hot(u.emotion_index, mc.n_emotions);
    const Vec y_s = model.student_head.forward(enc.prosody);
    const Vec y_t = model.teacher_head.forward(z_teacher);
    terms.pred = loss_pred(y, y_t, y_s);
    if (grad && cfg.lambda > 0)
      d_prosody += model.student_head.backward(enc.prosody, cfg.lambda * loss_pred_grad(y, y_s));
  }
  if (cfg.cons_weight > 0) {
    // Clean branch is a constant target.
    const auto clean = model.encoder.forward(clean_units);
    const double n = static_cast<double>(clean.content.size() + clean.prosody.size());
    terms.cons = ((enc.content - clean.content).squaredNorm() + (enc.prosody - clean.prosody).squaredNorm()) / n;
    if (grad) {
      d_content += cfg.cons_weight * 2.0 * (enc.content - clean.content) / n;
      d_prosody += cfg.cons_weight * 2.0 * (enc.prosody - clean.prosody) / n;
    }
  }
  if (grad) {
    Mat d_in = model.encoder.backward(enc_cache, d_content, d_prosody);
    if (d_input) *d_input = std::move(d_in);
  }
  return terms;
}

LossTerms student_batch(SavcModel& model, std::span<const Utterance* const> batch, const TrainConfig& cfg,
                        StudentObjective objective, CounterRng& rng, bool grad) {
  std::vector<Mat> clean;
  clean.reserve(batch.size());
  for (const auto* u : batch) clean.push_back(model.prepare_units(u->units));

  const bool asa_on = cfg.asa_mode != AsaMode::off;
  asa::PerturbParams pp;
  asa::AsaCache asa_cache;
  std::vector<Mat> inputs;
  if (asa_on) {
    pp = model.perturb_params(perturb_mode(cfg.asa_mode), cfg.grl_lambda);
    inputs = asa::asa_forward(clean, pp, rng, &asa_cache);
  } else {
    inputs = clean;
  }

  Accumulator acc;
  std::vector<Mat> d_inputs(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    acc.add(student_item(model, *batch[b], clean[b], inputs[b], cfg, objective, grad, &d_inputs[b]));
  }
  if (grad && asa_on) {
    const auto g = asa::asa_backward(asa_cache, d_inputs, pp);
    model.asa_i_mu.grad.col(0) += g.i_mu;
    model.asa_i_sigma.grad.col(0) += g.i_sigma;
  }
  return acc.sum;
}

Mat contour_target(const Mat& teacher_input) {
  Mat t(teacher_input.rows(), 2);
  t.col(0) = teacher_input.col(0);
  t.col(1) = teacher_input.col(2);
  return t;
}

}  // namespace

LossTerms student_batch_gradients(SavcModel& model, std::span<const Utterance* const> batch, const TrainConfig& cfg,
                                  StudentObjective objective, CounterRng& rng) {
  return student_batch(model, batch, cfg, objective, rng, true);
}

double student_batch_loss(const SavcModel& model, std::span<const Utterance* const> batch, const TrainConfig& cfg,
                          StudentObjective objective, CounterRng& rng) {
  // Forward only; the model is not modified when grad is false.
  auto& m = const_cast<SavcModel&>(model);
  return loss_total(student_batch(m, batch, cfg, objective, rng, false), cfg);
}

LossTerms teacher_batch_gradients(SavcModel& model, std::span<const Utterance* const> batch, const TrainConfig& cfg) {
  const int k = model.config().n_emotions;
  LossTerms sum;
  for (const auto* u : batch) {
    TeacherEncoder::Cache cache;
    const Mat z = model.teacher.forward(u->f0, u->voicing(), u->energy, &cache);
    const Vec y = one_hot(u->emotion_index, k);
    const Vec y_t = model.teacher_head.forward(z);
    sum.pred += (y - y_t).squaredNorm();
    Mat dz = model.teacher_head.backward(z, loss_pred_grad(y, y_t));

    const Mat target = contour_target(cache.input);
    const Mat recon = model.contour_head.forward(z);
    sum.rec += mse(recon, target);
    dz += model.contour_head.backward(z, cfg.contour_weight * 2.0 * (recon - target) / static_cast<double>(recon.size()));
    model.teacher.backward(cache, dz);
  }
  return sum;
}

StageResult pretrain_teacher(const Dataset& train, const EncoderConfig& model_cfg, const TrainConfig& cfg) {
  cfg.validate();
  if (train.items.empty()) throw ValidationError("pretrain_teacher: empty training set");
  StageResult result;
  Checkpoint& ck = result.checkpoint;
  ck.model = SavcModel(model_cfg, train.speakers, train.emotions, cfg.seed);
  ck.train = cfg;
  CounterRng rng(hash_words({cfg.seed, hash_string("train")}));

  nn::Adam opt(ck.model.teacher_params(), {.lr = cfg.lr_teacher, .grad_clip = cfg.grad_clip});
  for (int step = 0; step < cfg.steps_teacher; ++step) {
    const auto t0 = Clock::now();
    auto batch = sample_batch(train, cfg.batch_size, rng);
    opt.zero_grad();
    const LossTerms t = teacher_batch_gradients(ck.model, batch, cfg);
    opt.set_lr(scheduled_lr(cfg, cfg.lr_teacher, step, cfg.steps_teacher));
    opt.step();
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    result.log.push_back({step, t.rec, 0.0, t.pred, cfg.contour_weight * t.rec + t.pred, ms});
  }
  ck.stage = Stage::teacher;
  ck.step_count = cfg.steps_teacher;
  ck.rng = rng.state();
  return result;
}

void fit_quantizer(SavcModel& model, const Dataset& train, CounterRng& rng) {
  const int k = model.config().quantize_centroids;
  if (k <= 0 || model.centroids.value.squaredNorm() > 0) return;
  Eigen::Index rows = 0;
  for (const auto& u : train.items) rows += u.units.rows();
  Mat frames(rows, model.config().unit_channels);
  Eigen::Index r = 0;
  for (const auto& u : train.items) {
    frames.middleRows(r, u.units.rows()) = u.units;
    r += u.units.rows();
  }
  model.centroids.value = kmeans(frames, k, 25, rng);
}

StageResult run_student_stage(const Dataset& train, Checkpoint start, const TrainConfig& cfg,
                              StudentObjective objective, int steps, Stage out_stage) {
  cfg.validate();
  if (train.items.empty()) throw ValidationError("training set is empty");
  StageResult result;
  result.checkpoint = std::move(start);
  Checkpoint& ck = result.checkpoint;
  ck.train = cfg;
  SavcModel& model = ck.model;
  CounterRng rng(ck.rng);
  fit_quantizer(model, train, rng);

  nn::ParamList body, head;
  for (auto& entry : model.student_params())
    (entry.first.rfind("student_head", 0) == 0 ? head : body).push_back(entry);
  nn::Adam student_opt(body, {.lr = cfg.lr_main, .grad_clip = cfg.grad_clip});
  nn::Adam head_opt(head, {.lr = cfg.lr_head, .grad_clip = cfg.grad_clip});
  const double lr_asa = cfg.lr_asa > 0 ? cfg.lr_asa : cfg.lr_main;
  nn::Adam asa_opt(model.asa_params(), {.lr = lr_asa, .grad_clip = cfg.grad_clip});
  const bool train_asa = cfg.asa_mode == AsaMode::learned_scale;

  // Fixed probe batch and noise for the adversarial-direction diagnostic.
  const bool track = train_asa && cfg.adversarial_window > 0;
  std::vector<const Utterance*> probe;
  if (track) {
    CounterRng probe_rng(hash_words({cfg.seed, hash_string("adversarial-probe")}));
    probe = sample_batch(train, cfg.batch_size, probe_rng);
  }
  const CounterRng probe_noise(hash_words({cfg.seed, hash_string("adversarial-noise")}));
  nn::Param window_mu = model.asa_i_mu, window_sigma = model.asa_i_sigma;

  // Teacher parameters stay bit-frozen: they are never handed to an optimizer.
  for (int step = 0; step < steps; ++step) {
    const auto t0 = Clock::now();
    auto batch = sample_batch(train, cfg.batch_size, rng);
    student_opt.zero_grad();
    head_opt.zero_grad();
    asa_opt.zero_grad();
    for (auto& [name, p] : model.teacher_params()) p->zero_grad();
    const LossTerms t = student_batch_gradients(model, batch, cfg, objective, rng);
    student_opt.set_lr(scheduled_lr(cfg, cfg.lr_main, step, steps));
    asa_opt.set_lr(scheduled_lr(cfg, lr_asa, step, steps));
    head_opt.set_lr(scheduled_lr(cfg, cfg.lr_head, step, steps));
    student_opt.step();
    head_opt.step();
    if (train_asa) asa_opt.step();
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    result.log.push_back({ck.step_count + step, t.rec, t.dis, t.pred, loss_total(t, cfg), ms});

    if (track && (step + 1) % cfg.adversarial_window == 0) {
      SavcModel before = model;
      before.asa_i_mu = window_mu;
      before.asa_i_sigma = window_sigma;
      CounterRng n1 = probe_noise, n2 = probe_noise;
      const double loss_new = student_batch_loss(model, probe, cfg, objective, n1);
      const double loss_old = student_batch_loss(before, probe, cfg, objective, n2);
      ++result.adversarial.windows;
      if (loss_new >= loss_old) ++result.adversarial.ascended;
      window_mu = model.asa_i_mu;
      window_sigma = model.asa_i_sigma;
    }
  }
  ck.stage = out_stage;
  ck.step_count += steps;
  ck.rng = rng.state();
  return result;
}

StageResult train_main(const Dataset& train, const Checkpoint& teacher, const TrainConfig& cfg) {
  require_stage(teacher, {Stage::teacher}, "train");
  return run_student_stage(train, teacher, cfg, StudentObjective::main, cfg.steps_main, Stage::main);
}

StageResult finetune(const Dataset& train, const Checkpoint& main, const TrainConfig& cfg) {
  require_stage(main, {Stage::main}, "finetune");
  return run_student_stage(train, main, cfg, StudentObjective::finetune, cfg.steps_finetune, Stage::finetuned);
}

double mean_reconstruction_loss(const SavcModel& model, const Dataset& data) {
  if (data.items.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& u : data.items) {
    const auto enc = model.encoder.forward(model.prepare_units(u.units));
    const Mat prosody = model.config().prosody_stream ? enc.prosody : Mat::Zero(enc.prosody.rows(), enc.prosody.cols());
    sum += loss_rec(model.decoder.forward(enc.content, prosody, model.speakers.embed(u.speaker)), u.mel);
  }
  return sum / static_cast<double>(data.items.size());
}

namespace {
Eigen::Index argmax(const Vec& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return i;
}
}  // namespace

double student_emotion_accuracy(const SavcModel& model, const Dataset& data) {
  if (data.items.empty()) return 0.0;
  int hits = 0;
  for (const auto& u : data.items) {
    const auto enc = model.encoder.forward(model.prepare_units(u.units));
    if (argmax(model.student_head.forward(enc.prosody)) == u.emotion_index) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.items.size());
}

double teacher_emotion_accuracy(const SavcModel& model, const Dataset& data) {
  if (data.items.empty()) return 0.0;
  int hits = 0;
  for (const auto& u : data.items) {
    const Mat z = model.teacher.forward(u.f0, u.voicing(), u.energy);
    if (argmax(model.teacher_head.forward(z)) == u.emotion_index) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.items.size());
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepMetrics>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,L_rec,L_dis,L_pred,L_total,wall_ms\n";
  char buf[256];
  for (const auto& m : log) {
    std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,%.9g,%.3f\n", m.step, m.rec, m.dis, m.pred, m.total,
                  m.wall_ms);
    out << buf;
  }
}

std::vector<StepMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("step,", 0) != 0) throw FormatError(path.string() + ": not a metrics log");
  std::vector<StepMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    StepMetrics m;
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf", &m.step, &m.rec, &m.dis, &m.pred, &m.total,
                    &m.wall_ms) != 6)
      throw FormatError(path.string() + ": malformed line '" + line + "'");
    out.push_back(m);
  }
  return out;
}

}  // namespace savc
