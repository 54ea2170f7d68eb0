#include "savc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "savc/error.hpp"

namespace savc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* b = v.data();
  const char* e = b + v.size();
  if (!v.empty() && *b == '+') ++b;
  auto res = std::from_chars(b, e, out);
  if (res.ec != std::errc() || res.ptr != e) throw ConfigError(key + ": cannot parse '" + v + "' as a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Acc>
Field number(Acc acc) {
  return {[acc](RunConfig& c, const std::string& k, const std::string& v) { acc(c) = parse_number<T>(k, v); },
          [acc](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return fmt_double(acc(const_cast<RunConfig&>(c)));
            else
              return std::to_string(acc(const_cast<RunConfig&>(c)));
          }};
}

template <class Acc>
Field boolean(Acc acc) {
  return {[acc](RunConfig& c, const std::string& k, const std::string& v) { acc(c) = parse_bool(k, v); },
          [acc](const RunConfig& c) { return std::string(acc(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class Acc>
Field text(Acc acc) {
  return {[acc](RunConfig& c, const std::string& k, const std::string& v) {
            if (v.empty()) throw ConfigError(k + ": empty value");
            acc(c) = v;
          },
          [acc](const RunConfig& c) { return acc(const_cast<RunConfig&>(c)); }};
}

// Ordered so dump() groups keys by section.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"data.speakers", number<int>([](RunConfig& c) -> int& { return c.data.n_speakers; })},
      {"data.emotions", number<int>([](RunConfig& c) -> int& { return c.data.n_emotions; })},
      {"data.utterances_per_pair", number<int>([](RunConfig& c) -> int& { return c.data.utterances_per_pair; })},
      {"data.frames", number<int>([](RunConfig& c) -> int& { return c.data.frames; })},
      {"data.unit_channels", number<int>([](RunConfig& c) -> int& { return c.data.unit_channels; })},
      {"data.mel_channels", number<int>([](RunConfig& c) -> int& { return c.data.mel_channels; })},
      {"data.seed", number<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.data.seed; })},
      {"data.scale_min", number<double>([](RunConfig& c) -> double& { return c.data.speaker_scale_range.first; })},
      {"data.scale_max", number<double>([](RunConfig& c) -> double& { return c.data.speaker_scale_range.second; })},
      {"data.shift_min", number<double>([](RunConfig& c) -> double& { return c.data.speaker_shift_range.first; })},
      {"data.shift_max", number<double>([](RunConfig& c) -> double& { return c.data.speaker_shift_range.second; })},

      {"model.unit_channels", number<int>([](RunConfig& c) -> int& { return c.model.unit_channels; })},
      {"model.conv_blocks", number<int>([](RunConfig& c) -> int& { return c.model.conv_blocks; })},
      {"model.kernel", number<int>([](RunConfig& c) -> int& { return c.model.kernel; })},
      {"model.dilations",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.dilations = parse_int_list(k, v); },
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.model.dilations.size(); ++i)
            s += (i ? "," : "") + std::to_string(c.model.dilations[i]);
          return s;
        }}},
      {"model.conv_channels", number<int>([](RunConfig& c) -> int& { return c.model.conv_channels; })},
      {"model.gru_hidden", number<int>([](RunConfig& c) -> int& { return c.model.gru_hidden; })},
      {"model.d_content", number<int>([](RunConfig& c) -> int& { return c.model.d_content; })},
      {"model.d_prosody", number<int>([](RunConfig& c) -> int& { return c.model.d_prosody; })},
      {"model.d_speaker", number<int>([](RunConfig& c) -> int& { return c.model.d_speaker; })},
      {"model.style_tokens", number<int>([](RunConfig& c) -> int& { return c.model.n_style_tokens; })},
      {"model.emotions", number<int>([](RunConfig& c) -> int& { return c.model.n_emotions; })},
      {"model.mel_channels", number<int>([](RunConfig& c) -> int& { return c.model.mel_channels; })},
      {"model.prosody_stream", boolean([](RunConfig& c) -> bool& { return c.model.prosody_stream; })},
      {"model.quantize_centroids", number<int>([](RunConfig& c) -> int& { return c.model.quantize_centroids; })},

      {"train.alpha", number<double>([](RunConfig& c) -> double& { return c.train.alpha; })},
      {"train.beta", number<double>([](RunConfig& c) -> double& { return c.train.beta; })},
      {"train.lambda", number<double>([](RunConfig& c) -> double& { return c.train.lambda; })},
      {"train.cons_weight", number<double>([](RunConfig& c) -> double& { return c.train.cons_weight; })},
      {"train.contour_weight", number<double>([](RunConfig& c) -> double& { return c.train.contour_weight; })},
      {"train.lr_teacher", number<double>([](RunConfig& c) -> double& { return c.train.lr_teacher; })},
      {"train.lr_main", number<double>([](RunConfig& c) -> double& { return c.train.lr_main; })},
      {"train.lr_asa", number<double>([](RunConfig& c) -> double& { return c.train.lr_asa; })},
      {"train.lr_head", number<double>([](RunConfig& c) -> double& { return c.train.lr_head; })},
      {"train.lr_schedule", text([](RunConfig& c) -> std::string& { return c.train.lr_schedule; })},
      {"train.batch_size", number<int>([](RunConfig& c) -> int& { return c.train.batch_size; })},
      {"train.steps_teacher", number<int>([](RunConfig& c) -> int& { return c.train.steps_teacher; })},
      {"train.steps_main", number<int>([](RunConfig& c) -> int& { return c.train.steps_main; })},
      {"train.steps_finetune", number<int>([](RunConfig& c) -> int& { return c.train.steps_finetune; })},
      {"train.grad_clip", number<double>([](RunConfig& c) -> double& { return c.train.grad_clip; })},
      {"train.seed", number<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.train.seed; })},
      {"train.asa_mode",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            c.train.asa_mode = parse_asa_mode(v);
          } catch (const Error& e) {
            throw ConfigError(k + ": " + e.what());
          }
        },
        [](const RunConfig& c) { return to_string(c.train.asa_mode); }}},
      {"train.grl_lambda", number<double>([](RunConfig& c) -> double& { return c.train.grl_lambda; })},
      {"train.adversarial_window", number<int>([](RunConfig& c) -> int& { return c.train.adversarial_window; })},
      {"train.holdout_every", number<int>([](RunConfig& c) -> int& { return c.train.holdout_every; })},

      {"eval.pairs", number<int>([](RunConfig& c) -> int& { return c.eval.pairs; })},
      {"eval.reconstruction", boolean([](RunConfig& c) -> bool& { return c.eval.reconstruction; })},
      {"eval.probe_epochs", number<int>([](RunConfig& c) -> int& { return c.eval.probe_epochs; })},
      {"eval.probe_lr", number<double>([](RunConfig& c) -> double& { return c.eval.probe_lr; })},
      {"eval.probe_test_fraction", number<double>([](RunConfig& c) -> double& { return c.eval.probe_test_fraction; })},
      {"eval.seed", number<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.eval.seed; })},

      {"paths.data", text([](RunConfig& c) -> std::string& { return c.paths.data_dir; })},
      {"paths.teacher", text([](RunConfig& c) -> std::string& { return c.paths.teacher_dir; })},
      {"paths.main", text([](RunConfig& c) -> std::string& { return c.paths.main_dir; })},
      {"paths.finetune", text([](RunConfig& c) -> std::string& { return c.paths.finetune_dir; })},
      {"paths.report", text([](RunConfig& c) -> std::string& { return c.paths.report; })},
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return &f;
  return nullptr;
}

}  // namespace

void RunConfig::set(const std::string& qualified_key, const std::string& value) {
  const Field* f = find_field(qualified_key);
  if (!f) throw ConfigError("unknown key '" + qualified_key + "'");
  f->set(*this, qualified_key, value);
  explicit_keys.insert(qualified_key);
}

void RunConfig::set_seed(std::uint64_t seed) {
  for (const char* k : {"data.seed", "train.seed", "eval.seed"}) set(k, std::to_string(seed));
}

void RunConfig::set_default_seed(std::uint64_t seed) {
  for (const char* k : {"data.seed", "train.seed", "eval.seed"})
    if (!explicit_keys.count(k)) find_field(k)->set(*this, k, std::to_string(seed));
}

void RunConfig::validate() const {
  try {
    data.validate();
    model.validate();
    train.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  if (model.unit_channels != data.unit_channels)
    throw ConfigError("model.unit_channels (" + std::to_string(model.unit_channels) +
                      ") must equal data.unit_channels (" + std::to_string(data.unit_channels) + ")");
  if (model.mel_channels != data.mel_channels)
    throw ConfigError("model.mel_channels must equal data.mel_channels");
  if (model.n_emotions != data.n_emotions) throw ConfigError("model.emotions must equal data.emotions");
  if (eval.pairs < 0) throw ConfigError("eval.pairs must be >= 0");
  if (eval.probe_epochs < 1) throw ConfigError("eval.probe_epochs must be >= 1");
  if (!(eval.probe_lr > 0)) throw ConfigError("eval.probe_lr must be > 0");
  if (!(eval.probe_test_fraction > 0 && eval.probe_test_fraction < 1))
    throw ConfigError("eval.probe_test_fraction must be in (0, 1)");
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, f] : fields()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << f.get(*this) << '\n';
  }
  return out.str();
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "model" && section != "train" && section != "eval" && section != "paths")
        throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace savc
