#include "savc/tensorio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "savc/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace savc {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need byte swapping");

FeatureTensor::FeatureTensor(std::vector<std::uint32_t> d, std::vector<float> values)
    : dims(std::move(d)), data(std::move(values)) {
  if (data.size() != numel()) {
    throw ValidationError("tensor data length does not match dims");
  }
}

std::size_t FeatureTensor::numel() const {
  if (dims.empty()) return 0;
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

FeatureTensor FeatureTensor::from_matrix(const Mat& m) {
  FeatureTensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data[k++] = static_cast<float>(m(r, c));
  return t;
}

FeatureTensor FeatureTensor::from_vector(const Vec& v) {
  FeatureTensor t;
  t.dims = {static_cast<std::uint32_t>(v.size())};
  t.data.resize(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data[i] = static_cast<float>(v(i));
  return t;
}

Mat FeatureTensor::to_matrix() const {
  if (dims.size() == 1) {
    Mat m(dims[0], 1);
    for (std::uint32_t i = 0; i < dims[0]; ++i) m(i, 0) = data[i];
    return m;
  }
  if (dims.size() != 2) throw ValidationError("expected a rank-2 tensor");
  Mat m(dims[0], dims[1]);
  std::size_t k = 0;
  for (std::uint32_t r = 0; r < dims[0]; ++r)
    for (std::uint32_t c = 0; c < dims[1]; ++c) m(r, c) = data[k++];
  return m;
}

Vec FeatureTensor::to_vector() const {
  if (dims.size() != 1 && !(dims.size() == 2 && (dims[0] == 1 || dims[1] == 1))) {
    throw ValidationError("expected a rank-1 tensor");
  }
  Vec v(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) v(static_cast<Eigen::Index>(i)) = data[i];
  return v;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw FormatError("tensor header truncated");
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

void check_shape(const std::vector<std::uint32_t>& dims) {
  if (dims.empty() || dims.size() > 3) throw ValidationError("tensor ndim must be 1..3");
  for (auto d : dims)
    if (d == 0) throw ValidationError("tensor dims must be >= 1");
}

TensorHeader parse_header(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0) {
    throw FormatError("bad tensor magic");
  }
  pos = 4;
  TensorHeader h;
  h.version = get<std::uint32_t>(bytes, pos);
  if (h.version != kTensorVersion) {
    throw FormatError("unsupported tensor version " + std::to_string(h.version));
  }
  h.dtype_code = get<std::uint8_t>(bytes, pos);
  if (h.dtype_code != 0) {
    throw FormatError("unsupported dtype code " + std::to_string(h.dtype_code));
  }
  auto ndim = get<std::uint8_t>(bytes, pos);
  if (ndim < 1 || ndim > 3) throw FormatError("tensor ndim out of range");
  for (int i = 0; i < ndim; ++i) {
    auto d = get<std::uint32_t>(bytes, pos);
    if (d == 0) throw FormatError("tensor dim of zero");
    h.dims.push_back(d);
  }
  return h;
}

std::vector<std::uint8_t> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const FeatureTensor& t) {
  check_shape(t.dims);
  if (t.data.size() != t.numel()) throw ValidationError("tensor data length does not match dims");
  for (float v : t.data) {
    if (!std::isfinite(v)) throw ValidationError("tensor contains NaN or Inf");
  }
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 + 2 + 4 * t.dims.size() + 4 * t.data.size());
  out.insert(out.end(), kTensorMagic, kTensorMagic + 4);
  put<std::uint32_t>(out, kTensorVersion);
  put<std::uint8_t>(out, 0);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) put<std::uint32_t>(out, d);
  for (float v : t.data) put<float>(out, v);
  return out;
}

FeatureTensor decode_tensor(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  TensorHeader h = parse_header(bytes, pos);
  FeatureTensor t;
  t.dims = h.dims;
  const std::size_t n = t.numel();
  if (bytes.size() - pos < n * sizeof(float)) {
    throw FormatError("tensor payload truncated: expected " + std::to_string(n * sizeof(float)) +
                      " bytes, found " + std::to_string(bytes.size() - pos));
  }
  if (bytes.size() - pos > n * sizeof(float)) throw FormatError("trailing bytes after tensor payload");
  t.data.resize(n);
  std::memcpy(t.data.data(), bytes.data() + pos, n * sizeof(float));
  return t;
}

void write_tensor(const fs::path& path, const FeatureTensor& t) {
  auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

FeatureTensor read_tensor(const fs::path& path) {
  auto bytes = slurp(path);
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

TensorHeader read_tensor_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> head(4 + 4 + 2 + 12);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  std::size_t pos = 0;
  return parse_header(head, pos);
}

// ---------------------------------------------------------------------------
// Manifest

fs::path Manifest::resolve(const fs::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

const UtteranceRecord& Manifest::find(const std::string& id) const {
  for (const auto& r : utterances)
    if (r.id == id) return r;
  throw ValidationError("unknown utterance id '" + id + "'");
}

std::vector<std::string> Manifest::speakers() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& r : utterances)
    if (seen.insert(r.speaker).second) out.push_back(r.speaker);
  return out;
}

std::vector<std::string> Manifest::emotion_labels() const {
  if (!emotions.empty()) return emotions;
  std::set<std::string> s;
  for (const auto& r : utterances) s.insert(r.emotion);
  return {s.begin(), s.end()};
}

namespace {

const std::set<std::string> kRecordFields = {"id",       "speaker",     "emotion",    "units_path",
                                             "mel_path", "f0_path",     "energy_path", "factors_path"};
const std::set<std::string> kTopFields = {"format_version", "sample_rate_hz", "emotions", "utterances"};

std::string require_string(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
  if (!j.at(key).is_string()) throw ValidationError(where + ": field '" + key + "' must be a string");
  return j.at(key).get<std::string>();
}

void warn_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      std::cerr << "warning: " << where << ": ignoring unknown field '" << it.key() << "'\n";
    }
  }
}

}  // namespace

void validate_record_shapes(const Manifest& m, const UtteranceRecord& rec) {
  auto units = read_tensor_header(m.resolve(rec.units_path));
  auto mel = read_tensor_header(m.resolve(rec.mel_path));
  auto f0 = read_tensor_header(m.resolve(rec.f0_path));
  auto energy = read_tensor_header(m.resolve(rec.energy_path));
  auto where = "utterance '" + rec.id + "'";
  if (units.dims.size() != 2) throw ValidationError(where + ": units must be W x C");
  if (mel.dims.size() != 2) throw ValidationError(where + ": mel must be W x M");
  const auto w = units.dims[0];
  if (mel.dims[0] != w) {
    throw ValidationError(where + ": mel has " + std::to_string(mel.dims[0]) + " frames, units " +
                          std::to_string(w));
  }
  auto check_1d = [&](const TensorHeader& h, const char* name) {
    if (h.dims.size() != 1 || h.dims[0] != w) {
      throw ValidationError(where + ": " + name + " length " + std::to_string(h.dims.back()) +
                            " does not match units frames " + std::to_string(w));
    }
  };
  check_1d(f0, "f0");
  check_1d(energy, "energy");
}

Manifest load_manifest(const fs::path& path, const ManifestOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError("manifest must be a JSON object");
  warn_unknown(j, kTopFields, "manifest");

  Manifest m;
  m.base_dir = path.parent_path();
  if (!j.contains("format_version") || !j["format_version"].is_number_integer())
    throw ValidationError("manifest: missing integer field 'format_version'");
  if (!j.contains("sample_rate_hz") || !j["sample_rate_hz"].is_number_integer())
    throw ValidationError("manifest: missing integer field 'sample_rate_hz'");
  if (!j.contains("utterances") || !j["utterances"].is_array())
    throw ValidationError("manifest: missing array field 'utterances'");
  m.format_version = j["format_version"].get<int>();
  m.sample_rate_hz = j["sample_rate_hz"].get<int>();
  if (j.contains("emotions")) m.emotions = j["emotions"].get<std::vector<std::string>>();

  std::vector<std::string> labels = opts.emotion_labels.empty() ? m.emotions : opts.emotion_labels;
  std::unordered_set<std::string> label_set(labels.begin(), labels.end());
  std::unordered_set<std::string> ids;

  std::size_t index = 0;
  for (const auto& u : j["utterances"]) {
    const auto where = "utterance #" + std::to_string(index++);
    if (!u.is_object()) throw ValidationError(where + ": must be an object");
    warn_unknown(u, kRecordFields, where);
    UtteranceRecord r;
    r.id = require_string(u, "id", where);
    r.speaker = require_string(u, "speaker", where);
    r.emotion = require_string(u, "emotion", where);
    r.units_path = require_string(u, "units_path", where);
    r.mel_path = require_string(u, "mel_path", where);
    r.f0_path = require_string(u, "f0_path", where);
    r.energy_path = require_string(u, "energy_path", where);
    if (u.contains("factors_path") && !u["factors_path"].is_null())
      r.factors_path = require_string(u, "factors_path", where);

    if (r.id.empty()) throw ValidationError(where + ": empty id");
    if (r.speaker.empty()) throw ValidationError(where + ": empty speaker label");
    if (r.emotion.empty()) throw ValidationError(where + ": empty emotion label");
    if (!ids.insert(r.id).second) throw ValidationError("duplicate utterance id '" + r.id + "'");
    if (!label_set.empty() && !label_set.count(r.emotion))
      throw ValidationError("utterance '" + r.id + "': unknown emotion label '" + r.emotion + "'");

    for (const auto* p : {&r.units_path, &r.mel_path, &r.f0_path, &r.energy_path}) {
      if (!fs::exists(m.resolve(*p)))
        throw ValidationError("utterance '" + r.id + "': missing file " + m.resolve(*p).string());
    }
    if (r.factors_path && !fs::exists(m.resolve(*r.factors_path)))
      throw ValidationError("utterance '" + r.id + "': missing file " + m.resolve(*r.factors_path).string());
    m.utterances.push_back(std::move(r));
  }
  if (!opts.emotion_labels.empty()) m.emotions = opts.emotion_labels;
  if (opts.strict) {
    for (const auto& r : m.utterances) validate_record_shapes(m, r);
  }
  return m;
}

void save_manifest(const fs::path& path, const Manifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["sample_rate_hz"] = m.sample_rate_hz;
  if (!m.emotions.empty()) j["emotions"] = m.emotions;
  j["utterances"] = json::array();
  for (const auto& r : m.utterances) {
    json u;
    u["id"] = r.id;
    u["speaker"] = r.speaker;
    u["emotion"] = r.emotion;
    u["units_path"] = r.units_path.generic_string();
    u["mel_path"] = r.mel_path.generic_string();
    u["f0_path"] = r.f0_path.generic_string();
    u["energy_path"] = r.energy_path.generic_string();
    if (r.factors_path) u["factors_path"] = r.factors_path->generic_string();
    j["utterances"].push_back(std::move(u));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Dataset

Vec Utterance::voicing() const {
  return (f0.array() != 0.0).cast<double>().matrix();
}

Utterance load_utterance(const Manifest& m, const UtteranceRecord& rec) {
  validate_record_shapes(m, rec);
  Utterance u;
  u.id = rec.id;
  u.speaker = rec.speaker;
  u.emotion = rec.emotion;
  u.units = read_tensor(m.resolve(rec.units_path)).to_matrix();
  u.mel = read_tensor(m.resolve(rec.mel_path)).to_matrix();
  u.f0 = read_tensor(m.resolve(rec.f0_path)).to_vector();
  u.energy = read_tensor(m.resolve(rec.energy_path)).to_vector();
  return u;
}

Dataset load_dataset(const Manifest& m) {
  Dataset d;
  d.speakers = m.speakers();
  d.emotions = m.emotion_labels();
  std::unordered_map<std::string, int> spk_index, emo_index;
  for (std::size_t i = 0; i < d.speakers.size(); ++i) spk_index[d.speakers[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < d.emotions.size(); ++i) emo_index[d.emotions[i]] = static_cast<int>(i);
  d.items.reserve(m.utterances.size());
  for (const auto& r : m.utterances) {
    auto u = load_utterance(m, r);
    u.speaker_index = spk_index.at(u.speaker);
    u.emotion_index = emo_index.at(u.emotion);
    d.items.push_back(std::move(u));
  }
  return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, int every) {
  if (every < 2) throw ValidationError("holdout interval must be >= 2");
  Dataset train{data.speakers, data.emotions, {}};
  Dataset held{data.speakers, data.emotions, {}};
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    ((i + 1) % static_cast<std::size_t>(every) == 0 ? held : train).items.push_back(data.items[i]);
  }
  return {std::move(train), std::move(held)};
}

}  // namespace savc
