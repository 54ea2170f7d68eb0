#include "savc/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "savc/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace savc {

std::string to_string(Stage s) {
  switch (s) {
    case Stage::teacher: return "teacher";
    case Stage::main: return "main";
    case Stage::finetuned: return "finetuned";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  if (s == "teacher") return Stage::teacher;
  if (s == "main") return Stage::main;
  if (s == "finetuned") return Stage::finetuned;
  throw FormatError("unknown checkpoint stage '" + s + "'");
}

void require_stage(const Checkpoint& ckpt, std::initializer_list<Stage> allowed, const std::string& what) {
  for (auto s : allowed)
    if (ckpt.stage == s) return;
  std::string list;
  for (auto s : allowed) list += (list.empty() ? "" : "|") + to_string(s);
  throw StageError(what + " needs a checkpoint at stage " + list + ", got " + to_string(ckpt.stage));
}

namespace {

json encoder_json(const EncoderConfig& c) {
  return {{"unit_channels", c.unit_channels}, {"conv_blocks", c.conv_blocks},     {"kernel", c.kernel},
          {"dilations", c.dilations},         {"conv_channels", c.conv_channels}, {"gru_hidden", c.gru_hidden},
          {"d_content", c.d_content},         {"d_prosody", c.d_prosody},         {"d_speaker", c.d_speaker},
          {"n_style_tokens", c.n_style_tokens}, {"n_emotions", c.n_emotions},     {"mel_channels", c.mel_channels},
          {"prosody_stream", c.prosody_stream}, {"quantize_centroids", c.quantize_centroids}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.unit_channels = j.at("unit_channels");
  c.conv_blocks = j.at("conv_blocks");
  c.kernel = j.at("kernel");
  c.dilations = j.at("dilations").get<std::vector<int>>();
  c.conv_channels = j.at("conv_channels");
  c.gru_hidden = j.at("gru_hidden");
  c.d_content = j.at("d_content");
  c.d_prosody = j.at("d_prosody");
  c.d_speaker = j.at("d_speaker");
  c.n_style_tokens = j.at("n_style_tokens");
  c.n_emotions = j.at("n_emotions");
  c.mel_channels = j.at("mel_channels");
  c.prosody_stream = j.at("prosody_stream");
  c.quantize_centroids = j.at("quantize_centroids");
  return c;
}

json train_json(const TrainConfig& t) {
  return {{"alpha", t.alpha},
          {"beta", t.beta},
          {"lambda", t.lambda},
          {"cons_weight", t.cons_weight},
          {"contour_weight", t.contour_weight},
          {"lr_teacher", t.lr_teacher},
          {"lr_main", t.lr_main},
          {"lr_asa", t.lr_asa},
          {"lr_head", t.lr_head},
          {"lr_schedule", t.lr_schedule},
          {"batch_size", t.batch_size},
          {"steps_teacher", t.steps_teacher},
          {"steps_main", t.steps_main},
          {"steps_finetune", t.steps_finetune},
          {"grad_clip", t.grad_clip},
          {"seed", t.seed},
          {"asa_mode", to_string(t.asa_mode)},
          {"grl_lambda", t.grl_lambda},
          {"adversarial_window", t.adversarial_window},
          {"holdout_every", t.holdout_every}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.alpha = j.at("alpha");
  t.beta = j.at("beta");
  t.lambda = j.at("lambda");
  t.cons_weight = j.at("cons_weight");
  t.contour_weight = j.at("contour_weight");
  t.lr_teacher = j.at("lr_teacher");
  t.lr_main = j.at("lr_main");
  t.lr_asa = j.at("lr_asa");
  t.lr_head = j.at("lr_head");
  t.lr_schedule = j.at("lr_schedule");
  t.batch_size = j.at("batch_size");
  t.steps_teacher = j.at("steps_teacher");
  t.steps_main = j.at("steps_main");
  t.steps_finetune = j.at("steps_finetune");
  t.grad_clip = j.at("grad_clip");
  t.seed = j.at("seed");
  t.asa_mode = parse_asa_mode(j.at("asa_mode"));
  t.grl_lambda = j.at("grl_lambda");
  t.adversarial_window = j.at("adversarial_window");
  t.holdout_every = j.at("holdout_every");
  return t;
}

}  // namespace

void save_checkpoint(const fs::path& dir, Checkpoint& ckpt) {
  std::error_code ec;
  fs::create_directories(dir / "params", ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  json j;
  j["format"] = "savc-checkpoint";
  j["version"] = 1;
  j["stage"] = to_string(ckpt.stage);
  j["step_count"] = ckpt.step_count;
  j["rng"] = {{"key", ckpt.rng.key}, {"counter", ckpt.rng.counter}};
  j["model"] = encoder_json(ckpt.model.config());
  j["train"] = train_json(ckpt.train);
  j["speakers"] = ckpt.model.speakers.names();
  j["emotions"] = ckpt.model.emotions();
  json index = json::array();
  for (auto& [name, p] : ckpt.model.all_params()) {
    write_tensor(dir / "params" / (name + ".savt"), FeatureTensor::from_matrix(p->value));
    index.push_back(name);
  }
  j["params"] = std::move(index);
  std::ofstream out(dir / "config.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "config.json").string());
  out << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) throw IoError("no checkpoint at " + dir.string());
  Checkpoint ckpt;
  json j;
  try {
    j = json::parse(in);
    if (j.at("format") != "savc-checkpoint" || j.at("version") != 1)
      throw FormatError("unsupported checkpoint format in " + dir.string());
    ckpt.stage = parse_stage(j.at("stage"));
    ckpt.step_count = j.at("step_count");
    ckpt.rng = {j.at("rng").at("key"), j.at("rng").at("counter")};
    ckpt.train = train_from_json(j.at("train"));
    ckpt.model = SavcModel(encoder_from_json(j.at("model")), j.at("speakers").get<std::vector<std::string>>(),
                           j.at("emotions").get<std::vector<std::string>>(), 0);
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint config in " + dir.string() + ": " + e.what());
  }
  auto params = ckpt.model.all_params();
  const auto names = j.at("params").get<std::vector<std::string>>();
  if (names.size() != params.size())
    throw FormatError("checkpoint parameter count mismatch in " + dir.string());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params[i];
    if (names[i] != name) throw FormatError("checkpoint parameter '" + names[i] + "' where '" + name + "' expected");
    Mat v = read_tensor(dir / "params" / (name + ".savt")).to_matrix();
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw FormatError("checkpoint parameter '" + name + "' has the wrong shape");
    p->value = std::move(v);
    p->zero_grad();
  }
  return ckpt;
}

std::string checkpoint_summary(Checkpoint& ckpt) {
  std::ostringstream os;
  std::size_t count = 0;
  auto params = ckpt.model.all_params();
  for (auto& [name, p] : params) count += static_cast<std::size_t>(p->value.size());
  os << "stage: " << to_string(ckpt.stage) << '\n'
     << "steps: " << ckpt.step_count << '\n'
     << "speakers: " << ckpt.model.speakers.names().size() << '\n'
     << "emotions: " << ckpt.model.emotions().size() << '\n'
     << "asa_mode: " << to_string(ckpt.train.asa_mode) << '\n'
     << "parameters: " << count << " in " << params.size() << " tensors\n";
  for (auto& [name, p] : params) os << "  " << name << " " << p->value.rows() << "x" << p->value.cols() << '\n';
  return os.str();
}

}  // namespace savc
