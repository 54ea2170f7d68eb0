#include "savc/report.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "savc/error.hpp"
#include "savc/metrics.hpp"
#include "savc/syndata.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace savc {

namespace {

// Runs f(i) for i in [0, n) on up to `jobs` threads; each index owns its output slot.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= n) return;
          try {
            f(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
            next = n;
            return;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

std::optional<double> mean_defined(const std::vector<std::optional<double>>& v) {
  std::vector<double> ok;
  for (const auto& x : v)
    if (x) ok.push_back(*x);
  if (ok.empty()) return std::nullopt;
  return mean_of(ok);
}

struct SpeakerRef {
  Vec mel_stats;  // corpus mean of pooled mel stats
  std::optional<std::pair<Vec, Vec>> style;  // ground-truth (mu, sigma) when factors exist
};

}  // namespace

std::vector<ConversionPair> random_pairs(const Dataset& pool, int n, std::uint64_t seed) {
  std::vector<ConversionPair> out;
  if (n <= 0) return out;
  if (pool.items.empty()) throw ValidationError("random_pairs: empty pool");
  if (pool.speakers.size() < 2) throw ValidationError("random_pairs: need at least two speakers");
  CounterRng rng(hash_words({seed, hash_string("pairs")}));
  for (int k = 0; k < n; ++k) {
    const auto& src = pool.items[rng.below(pool.items.size())];
    std::string target;
    do {
      target = pool.speakers[rng.below(pool.speakers.size())];
    } while (target == src.speaker);
    out.push_back({src.id, target});
  }
  return out;
}

EvalReport eval_report(const Manifest& manifest, const Checkpoint& ckpt, const std::vector<ConversionPair>& pairs,
                       const EvalOptions& opts) {
  require_stage(ckpt, {Stage::main, Stage::finetuned}, "eval");
  const SavcModel& model = ckpt.model;
  const Dataset data = load_dataset(manifest);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < data.items.size(); ++i) index.emplace(data.items[i].id, i);
  auto item = [&](const std::string& id) -> const Utterance& {
    auto it = index.find(id);
    if (it == index.end()) throw ValidationError("unknown utterance id '" + id + "'");
    return data.items[it->second];
  };

  // Resolve everything up front so a bad pair fails before any work.
  for (const auto& p : pairs) {
    item(p.utterance_id);
    model.speakers.embed(p.target_speaker);
  }
  for (const auto& id : opts.reconstruction_ids) item(id);

  std::map<std::string, SpeakerRef> refs;
  {
    std::map<std::string, std::vector<Vec>> stats;
    for (const auto& u : data.items) stats[u.speaker].push_back(pooled_stats(u.mel));
    for (auto& [spk, v] : stats) {
      Vec m = Vec::Zero(v.front().size());
      for (const auto& s : v) m += s;
      refs[spk].mel_stats = m / static_cast<double>(v.size());
    }
    for (const auto& rec : manifest.utterances) {
      auto& ref = refs[rec.speaker];
      if (ref.style || !rec.factors_path) continue;
      const auto f = syndata::ground_truth(manifest, rec);
      ref.style = std::make_pair(f.speaker_mu, f.speaker_sigma);
    }
  }

  EvalReport r;
  r.seed = opts.seed;
  r.checkpoint_stage = to_string(ckpt.stage);
  r.config_echo = opts.config_echo;
  r.pairs.resize(pairs.size());

  parallel_for(pairs.size(), opts.jobs, [&](std::size_t k) {
    const auto& p = pairs[k];
    const Utterance& src = item(p.utterance_id);
    PairMetrics& m = r.pairs[k];
    m.source_id = src.id;
    m.source_speaker = src.speaker;
    m.target_speaker = p.target_speaker;

    const Mat converted = convert_units(model, src.units, model.speakers.embed(p.target_speaker));
    const Mat self = convert_units(model, src.units, model.speakers.embed(src.speaker));
    m.self_mcd = mcd(self, src.mel);

    const auto rec = manifest.find(src.id);
    auto tgt = refs.find(p.target_speaker);
    if (rec.factors_path && tgt != refs.end() && tgt->second.style) {
      auto f = syndata::ground_truth(manifest, rec);
      f.speaker_mu = tgt->second.style->first;
      f.speaker_sigma = tgt->second.style->second;
      const Mat truth = syndata::render_utterance(f).mel;
      m.mcd = mcd(converted, truth);
      m.baseline_mcd = mcd(src.mel, truth);
    }

    m.pearson_f0 = pearson_masked(pitch_proxy(src.mel), pitch_proxy(converted), src.voicing());
    m.pearson_energy = pearson(energy_proxy(src.mel), energy_proxy(converted));

    const Vec stats = pooled_stats(converted);
    const Vec& target_stats = refs.at(p.target_speaker).mel_stats;
    const Vec& source_stats = refs.at(src.speaker).mel_stats;
    m.ses = cosine_sim(stats, target_stats);
    m.dist_target = (stats - target_stats).norm();
    m.dist_source = (stats - source_stats).norm();
  });

  std::vector<double> mcds, baselines, selfs, ses, closer;
  std::vector<std::optional<double>> pf0, pen;
  for (const auto& m : r.pairs) {
    if (m.mcd) {
      mcds.push_back(*m.mcd);
      baselines.push_back(*m.baseline_mcd);
    } else {
      ++r.mcd_skipped;
    }
    selfs.push_back(m.self_mcd);
    ses.push_back(m.ses);
    closer.push_back(m.dist_target < m.dist_source ? 1.0 : 0.0);
    pf0.push_back(m.pearson_f0);
    pen.push_back(m.pearson_energy);
  }
  if (r.mcd_skipped > 0)
    std::cerr << "warning: " << r.mcd_skipped << " pair(s) have no ground-truth rendering; skipped for MCD\n";
  r.mcd_count = static_cast<int>(mcds.size());
  r.mcd_mean = mean_of(mcds);
  r.mcd_std = std_of(mcds);
  r.baseline_mcd_mean = mean_of(baselines);
  r.self_mcd_mean = mean_of(selfs);
  r.ses_mean = mean_of(ses);
  r.target_closer_fraction = mean_of(closer);
  r.pearson_f0_mean = mean_defined(pf0);
  r.pearson_energy_mean = mean_defined(pen);

  if (!opts.reconstruction_ids.empty()) {
    const auto& ids = opts.reconstruction_ids;
    std::vector<double> rmcd(ids.size());
    std::vector<std::optional<double>> rf0(ids.size()), ren(ids.size());
    parallel_for(ids.size(), opts.jobs, [&](std::size_t k) {
      const Utterance& u = item(ids[k]);
      const Mat rec = convert_units(model, u.units, model.speakers.embed(u.speaker));
      rmcd[k] = mcd(rec, u.mel);
      rf0[k] = pearson_masked(pitch_proxy(u.mel), pitch_proxy(rec), u.voicing());
      ren[k] = pearson(energy_proxy(u.mel), energy_proxy(rec));
    });
    ReconstructionSummary s;
    s.utterances = static_cast<int>(ids.size());
    s.mcd_mean = mean_of(rmcd);
    s.pearson_f0_mean = mean_defined(rf0);
    s.pearson_energy_mean = mean_defined(ren);
    r.reconstruction = s;
  }

  // Probes over the whole corpus.
  const auto n = data.items.size();
  const int dc = model.config().d_content, dp = model.config().d_prosody, c = model.config().unit_channels;
  Mat f_content(static_cast<Eigen::Index>(n), 2 * dc), f_raw(static_cast<Eigen::Index>(n), 2 * c),
      f_prosody(static_cast<Eigen::Index>(n), 2 * dp);
  std::vector<int> spk(n), emo(n);
  parallel_for(n, opts.jobs, [&](std::size_t i) {
    const auto& u = data.items[i];
    const auto enc = model.encoder.forward(model.prepare_units(u.units));
    const auto row = static_cast<Eigen::Index>(i);
    f_content.row(row) = pooled_stats(enc.content).transpose();
    f_raw.row(row) = pooled_stats(u.units).transpose();
    f_prosody.row(row) = pooled_stats(enc.prosody).transpose();
    spk[i] = u.speaker_index;
    emo[i] = u.emotion_index;
  });
  ProbeOptions po = opts.probe;
  po.seed = opts.seed;
  const auto a = leakage_probe(f_content, spk, po);
  const auto b = leakage_probe(f_raw, spk, po);
  const auto e = leakage_probe(f_prosody, emo, po);
  r.probes.speaker_from_content = a.accuracy;
  r.probes.speaker_from_raw = b.accuracy;
  r.probes.emotion_from_prosody = e.accuracy;
  r.probes.degenerate = a.degenerate || b.degenerate || e.degenerate;
  r.probes.samples = static_cast<int>(n);
  return r;
}

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

std::string report_to_json(const EvalReport& r) {
  json j;
  j["format"] = "savc-eval-report";
  j["version"] = 1;
  j["seed"] = r.seed;
  j["checkpoint_stage"] = r.checkpoint_stage;
  j["config"] = r.config_echo;
  j["summary"] = {{"pairs", r.pairs.size()},
                  {"mcd_count", r.mcd_count},
                  {"mcd_skipped", r.mcd_skipped},
                  {"mcd_mean", r.mcd_mean},
                  {"mcd_std", r.mcd_std},
                  {"self_mcd_mean", r.self_mcd_mean},
                  {"baseline_mcd_mean", r.baseline_mcd_mean},
                  {"pearson_f0_mean", opt_json(r.pearson_f0_mean)},
                  {"pearson_energy_mean", opt_json(r.pearson_energy_mean)},
                  {"ses_mean", r.ses_mean},
                  {"target_closer_fraction", r.target_closer_fraction},
                  {"cer", opt_json(r.cer)}};
  j["probes"] = {{"speaker_from_content", r.probes.speaker_from_content},
                 {"speaker_from_raw", r.probes.speaker_from_raw},
                 {"emotion_from_prosody", r.probes.emotion_from_prosody},
                 {"degenerate", r.probes.degenerate},
                 {"samples", r.probes.samples}};
  if (r.reconstruction) {
    j["reconstruction"] = {{"utterances", r.reconstruction->utterances},
                           {"mcd_mean", r.reconstruction->mcd_mean},
                           {"pearson_f0_mean", opt_json(r.reconstruction->pearson_f0_mean)},
                           {"pearson_energy_mean", opt_json(r.reconstruction->pearson_energy_mean)}};
  } else {
    j["reconstruction"] = nullptr;
  }
  j["pairs"] = json::array();
  for (const auto& m : r.pairs) {
    j["pairs"].push_back({{"source_id", m.source_id},
                          {"source_speaker", m.source_speaker},
                          {"target_speaker", m.target_speaker},
                          {"mcd", opt_json(m.mcd)},
                          {"baseline_mcd", opt_json(m.baseline_mcd)},
                          {"self_mcd", m.self_mcd},
                          {"pearson_f0", opt_json(m.pearson_f0)},
                          {"pearson_energy", opt_json(m.pearson_energy)},
                          {"ses", m.ses},
                          {"dist_target", m.dist_target},
                          {"dist_source", m.dist_source}});
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "savc-eval-report") throw FormatError("not an eval report");
    if (j.at("version") != 1) throw FormatError("unsupported report version");
    EvalReport r;
    r.seed = j.at("seed");
    r.checkpoint_stage = j.at("checkpoint_stage");
    r.config_echo = j.at("config");
    const auto& s = j.at("summary");
    r.mcd_count = s.at("mcd_count");
    r.mcd_skipped = s.at("mcd_skipped");
    r.mcd_mean = s.at("mcd_mean");
    r.mcd_std = s.at("mcd_std");
    r.self_mcd_mean = s.at("self_mcd_mean");
    r.baseline_mcd_mean = s.at("baseline_mcd_mean");
    r.pearson_f0_mean = opt_from(s, "pearson_f0_mean");
    r.pearson_energy_mean = opt_from(s, "pearson_energy_mean");
    r.ses_mean = s.at("ses_mean");
    r.target_closer_fraction = s.at("target_closer_fraction");
    r.cer = opt_from(s, "cer");
    const auto& p = j.at("probes");
    r.probes.speaker_from_content = p.at("speaker_from_content");
    r.probes.speaker_from_raw = p.at("speaker_from_raw");
    r.probes.emotion_from_prosody = p.at("emotion_from_prosody");
    r.probes.degenerate = p.at("degenerate");
    r.probes.samples = p.at("samples");
    if (!j.at("reconstruction").is_null()) {
      const auto& q = j.at("reconstruction");
      ReconstructionSummary rs;
      rs.utterances = q.at("utterances");
      rs.mcd_mean = q.at("mcd_mean");
      rs.pearson_f0_mean = opt_from(q, "pearson_f0_mean");
      rs.pearson_energy_mean = opt_from(q, "pearson_energy_mean");
      r.reconstruction = rs;
    }
    for (const auto& x : j.at("pairs")) {
      PairMetrics m;
      m.source_id = x.at("source_id");
      m.source_speaker = x.at("source_speaker");
      m.target_speaker = x.at("target_speaker");
      m.mcd = opt_from(x, "mcd");
      m.baseline_mcd = opt_from(x, "baseline_mcd");
      m.self_mcd = x.at("self_mcd");
      m.pearson_f0 = opt_from(x, "pearson_f0");
      m.pearson_energy = opt_from(x, "pearson_energy");
      m.ses = x.at("ses");
      m.dist_target = x.at("dist_target");
      m.dist_source = x.at("dist_source");
      r.pairs.push_back(std::move(m));
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed eval report: ") + e.what());
  }
}

// Long format: section,key,value. Undefined values are empty cells.
std::string report_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "section,key,value\n";
  auto row = [&](const std::string& sec, const std::string& key, const std::string& v) {
    out << sec << ',' << key << ',' << v << '\n';
  };
  row("run", "seed", std::to_string(r.seed));
  row("run", "checkpoint_stage", r.checkpoint_stage);
  row("summary", "pairs", std::to_string(r.pairs.size()));
  row("summary", "mcd_count", std::to_string(r.mcd_count));
  row("summary", "mcd_skipped", std::to_string(r.mcd_skipped));
  row("summary", "mcd_mean", fmt(r.mcd_mean));
  row("summary", "mcd_std", fmt(r.mcd_std));
  row("summary", "self_mcd_mean", fmt(r.self_mcd_mean));
  row("summary", "baseline_mcd_mean", fmt(r.baseline_mcd_mean));
  row("summary", "pearson_f0_mean", fmt(r.pearson_f0_mean));
  row("summary", "pearson_energy_mean", fmt(r.pearson_energy_mean));
  row("summary", "ses_mean", fmt(r.ses_mean));
  row("summary", "target_closer_fraction", fmt(r.target_closer_fraction));
  row("summary", "cer", fmt(r.cer));
  row("probes", "speaker_from_content", fmt(r.probes.speaker_from_content));
  row("probes", "speaker_from_raw", fmt(r.probes.speaker_from_raw));
  row("probes", "emotion_from_prosody", fmt(r.probes.emotion_from_prosody));
  row("probes", "degenerate", r.probes.degenerate ? "1" : "0");
  if (r.reconstruction) {
    row("reconstruction", "utterances", std::to_string(r.reconstruction->utterances));
    row("reconstruction", "mcd_mean", fmt(r.reconstruction->mcd_mean));
    row("reconstruction", "pearson_f0_mean", fmt(r.reconstruction->pearson_f0_mean));
    row("reconstruction", "pearson_energy_mean", fmt(r.reconstruction->pearson_energy_mean));
  }
  for (std::size_t i = 0; i < r.pairs.size(); ++i) {
    const auto& m = r.pairs[i];
    const std::string sec = "pair" + std::to_string(i);
    row(sec, "source_id", m.source_id);
    row(sec, "target_speaker", m.target_speaker);
    row(sec, "mcd", fmt(m.mcd));
    row(sec, "baseline_mcd", fmt(m.baseline_mcd));
    row(sec, "self_mcd", fmt(m.self_mcd));
    row(sec, "pearson_f0", fmt(m.pearson_f0));
    row(sec, "pearson_energy", fmt(m.pearson_energy));
    row(sec, "ses", fmt(m.ses));
  }
  return out.str();
}

void write_report(const fs::path& json_path, const EvalReport& r) {
  if (json_path.has_parent_path()) fs::create_directories(json_path.parent_path());
  auto put = [](const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << s;
  };
  put(json_path, report_to_json(r));
  fs::path csv = json_path;
  csv.replace_extension(".csv");
  put(csv, report_to_csv(r));
}

EvalReport load_report(const fs::path& json_path) {
  std::ifstream in(json_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + json_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

std::string svg_plot(const fs::path& csv_path, const std::string& title) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty csv " + csv_path.string());
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  const auto header = split(line);
  if (header.size() < 2) throw FormatError("csv needs at least two columns");
  std::vector<std::vector<double>> cols(header.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw FormatError("ragged csv row in " + csv_path.string());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      const auto* b = cells[c].data();
      auto res = std::from_chars(b, b + cells[c].size(), v);
      if (res.ec != std::errc()) throw FormatError("non-numeric cell '" + cells[c] + "'");
      cols[c].push_back(v);
    }
  }
  if (cols[0].empty()) throw FormatError("csv has no data rows");

  // One panel per series, stacked, each with its own y range.
  const double width = 640, panel = 140, margin = 40;
  const std::size_t series = header.size() - 1;
  const double height = margin + series * (panel + margin);
  const double x0 = cols[0].front(), x1 = std::max(cols[0].back(), x0 + 1e-12);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << margin << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title
      << "</text>\n";
  for (std::size_t s = 0; s < series; ++s) {
    const auto& ys = cols[s + 1];
    double lo = ys.front(), hi = ys.front();
    for (double v : ys) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    const double top = margin + s * (panel + margin);
    svg << "<rect x=\"" << margin << "\" y=\"" << top << "\" width=\"" << width - 2 * margin << "\" height=\""
        << panel << "\" fill=\"none\" stroke=\"#999\"/>\n";
    svg << "<text x=\"" << margin + 4 << "\" y=\"" << top + 14 << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << header[s + 1] << " [" << fmt(lo) << ", " << fmt(hi) << "]</text>\n";
    svg << "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) {
      const double px = margin + (cols[0][i] - x0) / (x1 - x0) * (width - 2 * margin);
      const double py = top + panel - (ys[i] - lo) / (hi - lo) * panel;
      svg << fmt(std::round(px * 100) / 100) << ',' << fmt(std::round(py * 100) / 100) << ' ';
    }
    svg << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace savc
