#include "savc/convert.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "savc/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace savc {

Mat convert_units(const SavcModel& model, const Mat& units, const Vec& target_embedding) {
  const auto enc = model.encoder.forward(model.prepare_units(units));
  const Mat prosody = model.config().prosody_stream ? enc.prosody : Mat::Zero(enc.prosody.rows(), enc.prosody.cols());
  return model.decoder.forward(enc.content, prosody, target_embedding);
}

Vec resolve_target(const SavcModel& model, const ConversionTarget& target) {
  if (target.embedding) {
    if (target.embedding->size() != model.speakers.dim())
      throw ValidationError("target embedding has dim " + std::to_string(target.embedding->size()) + ", expected " +
                            std::to_string(model.speakers.dim()));
    if (!target.embedding->allFinite()) throw ValidationError("target embedding is not finite");
    return *target.embedding;
  }
  return model.speakers.embed(target.speaker);
}

Mat convert(const Checkpoint& ckpt, const Manifest& manifest, const UtteranceRecord& source,
            const ConversionTarget& target) {
  require_stage(ckpt, {Stage::main, Stage::finetuned}, "convert");
  const Vec s = resolve_target(ckpt.model, target);
  const Utterance u = load_utterance(manifest, source);
  return convert_units(ckpt.model, u.units, s);
}

Mat convert(const ConversionRequest& req, const Manifest& manifest) {
  const Checkpoint ckpt = load_checkpoint(req.checkpoint);
  Mat mel = convert(ckpt, manifest, req.source, req.target);
  if (!req.output.empty()) write_tensor(req.output, FeatureTensor::from_matrix(mel));
  return mel;
}

namespace {

void save_results(const fs::path& path, const ConversionResults& r) {
  json j;
  j["format_version"] = 1;
  j["checkpoint_stage"] = r.checkpoint_stage;
  j["results"] = json::array();
  for (const auto& x : r.results) {
    j["results"].push_back({{"source_id", x.source_id},
                            {"target_speaker", x.target_speaker},
                            {"mel_path", x.mel_path.generic_string()},
                            {"frames", x.frames},
                            {"mel_channels", x.mel_channels}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

ConversionResults load_conversion_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const json j = json::parse(in);
    ConversionResults r;
    r.checkpoint_stage = j.at("checkpoint_stage");
    for (const auto& x : j.at("results")) {
      r.results.push_back({x.at("source_id"), x.at("target_speaker"), fs::path(x.at("mel_path").get<std::string>()),
                           x.at("frames"), x.at("mel_channels")});
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError("malformed results manifest " + path.string() + ": " + e.what());
  }
}

ConversionResults batch_convert(const Manifest& manifest, const std::vector<ConversionPair>& pairs,
                                const Checkpoint& ckpt, const fs::path& out_dir, int jobs) {
  require_stage(ckpt, {Stage::main, Stage::finetuned}, "batch_convert");
  // All-or-nothing: resolve every pair before touching the filesystem.
  std::vector<const UtteranceRecord*> sources;
  std::vector<Vec> targets;
  for (const auto& p : pairs) {
    sources.push_back(&manifest.find(p.utterance_id));
    targets.push_back(ckpt.model.speakers.embed(p.target_speaker));
  }

  std::error_code ec;
  fs::create_directories(out_dir / "mel", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "mel").string() + ": " + ec.message());

  ConversionResults results;
  results.checkpoint_stage = to_string(ckpt.stage);
  results.results.resize(pairs.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pairs.size()) return;
      try {
        const Utterance u = load_utterance(manifest, *sources[k]);
        const Mat mel = convert_units(ckpt.model, u.units, targets[k]);
        auto& r = results.results[k];
        r.source_id = pairs[k].utterance_id;
        r.target_speaker = pairs[k].target_speaker;
        r.mel_path = fs::path("mel") / (r.source_id + "__to__" + r.target_speaker + ".savt");
        r.frames = static_cast<std::uint32_t>(mel.rows());
        r.mel_channels = static_cast<std::uint32_t>(mel.cols());
        write_tensor(out_dir / r.mel_path, FeatureTensor::from_matrix(mel));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = pairs.size();
        return;
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(pairs.size())));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  save_results(out_dir / "results.json", results);
  return results;
}

}  // namespace savc
