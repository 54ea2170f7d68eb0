#include "savc_tools/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "savc/config.hpp"
#include "savc/convert.hpp"
#include "savc/error.hpp"
#include "savc/report.hpp"
#include "savc/syndata.hpp"
#include "savc/train.hpp"

namespace fs = std::filesystem;

namespace savc {

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config,-c", c.config, "Run config file");
  sub->add_option("--seed", c.seed, "Seed for data, training and evaluation");
  sub->add_option("--jobs,-j", c.jobs, "Worker threads (1 keeps runs bit-reproducible)")->check(CLI::PositiveNumber);
  sub->add_option("--set", c.sets, "Override a config key, e.g. --set train.steps_main=500");
}

// Priority: flags > config file > SAVC_SEED > built-in defaults.
RunConfig effective_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (const char* env = std::getenv("SAVC_SEED"); env && *env) {
    RunConfig probe;
    try {
      probe.set("train.seed", env);
    } catch (const ConfigError&) {
      throw ConfigError(std::string("SAVC_SEED: not an unsigned integer: '") + env + "'");
    }
    cfg.set_default_seed(probe.train.seed);
  }
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.set_seed(*c.seed);
  cfg.eval.jobs = c.jobs;
  cfg.validate();
  return cfg;
}

Manifest open_corpus(const std::string& dir) { return load_manifest(fs::path(dir) / "manifest.json"); }

Dataset training_split(const Manifest& m, const RunConfig& cfg) {
  return split_dataset(load_dataset(m), cfg.train.holdout_every).first;
}

void save_stage(const std::string& dir, StageResult& r) {
  save_checkpoint(dir, r.checkpoint);
  // The log carries wall times, so it lives beside the checkpoint, not in it.
  write_metrics_csv(fs::path(dir).concat(".metrics.csv"), r.log);
  const auto& last = r.log.empty() ? StepMetrics{} : r.log.back();
  std::cout << "stage=" << to_string(r.checkpoint.stage) << " steps=" << r.checkpoint.step_count
            << " L_rec=" << last.rec << " L_dis=" << last.dis << " L_pred=" << last.pred
            << " L_total=" << last.total;
  if (r.adversarial.windows > 0)
    std::cout << " adversarial_windows=" << r.adversarial.windows << " ascended=" << r.adversarial.ascended;
  std::cout << " checkpoint=" << dir << "\n";
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::cerr << "savc: error: " << kind << ": " << one_line(msg) << "\n";
  return code;
}

void inspect_path(const fs::path& p) {
  if (fs::is_directory(p) && fs::exists(p / "config.json")) {
    Checkpoint ck = load_checkpoint(p);
    std::cout << checkpoint_summary(ck);
    return;
  }
  if (fs::is_directory(p) && fs::exists(p / "manifest.json")) {
    const Manifest m = open_corpus(p.string());
    std::cout << "manifest " << (p / "manifest.json").string() << ": " << m.utterances.size() << " utterances, "
              << m.speakers().size() << " speakers, " << m.emotion_labels().size() << " emotions\n";
    return;
  }
  if (p.extension() == ".json") {
    const Manifest m = load_manifest(p);
    std::cout << "manifest " << p.string() << ": " << m.utterances.size() << " utterances, " << m.speakers().size()
              << " speakers, " << m.emotion_labels().size() << " emotions\n";
    return;
  }
  const TensorHeader h = read_tensor_header(p);
  std::cout << p.string() << ": SAVT v" << h.version << " float32 dims=[";
  for (std::size_t i = 0; i < h.dims.size(); ++i) std::cout << (i ? "," : "") << h.dims[i];
  std::cout << "]\n";
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  std::vector<std::string> copy = args;
  for (auto& a : copy) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Style-augmented voice conversion lab on synthetic soft-unit corpora", "savc"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;
  std::string data_dir, out, teacher, main_ckpt, ckpt, source, target, embedding, csv, title = "training log";
  std::vector<std::string> paths;
  int random_pairs_n = 0;
  bool dump_config = false;

  auto* gen = app.add_subcommand("gen-data", "Render a synthetic corpus and its manifest");
  auto* pre = app.add_subcommand("pretrain-teacher", "Train the prosody teacher");
  auto* trn = app.add_subcommand("train", "Main training stage (needs a teacher checkpoint)");
  auto* fin = app.add_subcommand("finetune", "Fine-tune with the distillation loss (needs a main checkpoint)");
  auto* cnv = app.add_subcommand("convert", "Convert utterances to a target speaker");
  auto* evl = app.add_subcommand("eval", "Objective metrics and leakage probes");
  auto* ins = app.add_subcommand("inspect", "Print tensor headers, manifests, checkpoints or the effective config");
  auto* plt = app.add_subcommand("plot", "Render a metrics CSV as SVG");
  for (auto* s : {gen, pre, trn, fin, cnv, evl, ins, plt}) add_common(s, common);

  gen->add_option("--out,-o", out, "Corpus directory (default paths.data)");
  for (auto* s : {pre, trn, fin, cnv, evl}) s->add_option("--data,-d", data_dir, "Corpus directory (default paths.data)");
  pre->add_option("--out,-o", out, "Teacher checkpoint directory");
  trn->add_option("--teacher", teacher, "Teacher checkpoint directory");
  trn->add_option("--out,-o", out, "Main checkpoint directory");
  fin->add_option("--main", main_ckpt, "Main checkpoint directory");
  fin->add_option("--out,-o", out, "Fine-tuned checkpoint directory");
  for (auto* s : {cnv, evl}) s->add_option("--ckpt", ckpt, "Checkpoint (default: fine-tuned, else main)");
  cnv->add_option("--source", source, "Source utterance id");
  cnv->add_option("--target", target, "Target speaker");
  cnv->add_option("--embedding", embedding, "Speaker embedding tensor for zero-shot targets");
  cnv->add_option("--random", random_pairs_n, "Convert N seeded random held-out pairs into --out")
      ->check(CLI::NonNegativeNumber);
  cnv->add_option("--out,-o", out, "Output mel tensor (single) or directory (--random)")->required();
  evl->add_option("--out,-o", out, "Report path (.json; a .csv is written beside it)");
  ins->add_option("paths", paths, "Tensor files, manifests, corpus or checkpoint directories");
  ins->add_flag("--dump-config", dump_config, "Print the effective config");
  plt->add_option("csv", csv, "Metrics CSV")->required();
  plt->add_option("--out,-o", out, "SVG path")->required();
  plt->add_option("--title", title, "Chart title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    const RunConfig cfg = effective_config(common);
    const std::string corpus = data_dir.empty() ? cfg.paths.data_dir : data_dir;

    if (*gen) {
      const auto m = syndata::make_corpus(cfg.data, out.empty() ? cfg.paths.data_dir : out, common.jobs);
      std::cout << "wrote " << m.utterances.size() << " utterances to " << (out.empty() ? cfg.paths.data_dir : out)
                << "\n";
    } else if (*pre) {
      const Manifest m = open_corpus(corpus);
      auto r = pretrain_teacher(training_split(m, cfg), cfg.model, cfg.train);
      save_stage(out.empty() ? cfg.paths.teacher_dir : out, r);
    } else if (*trn) {
      const fs::path tdir = teacher.empty() ? cfg.paths.teacher_dir : teacher;
      if (!fs::exists(tdir / "config.json"))
        throw StageError("train needs a teacher checkpoint; none found at " + tdir.string() +
                         " (run pretrain-teacher first)");
      const Checkpoint t = load_checkpoint(tdir);
      const Manifest m = open_corpus(corpus);
      auto r = train_main(training_split(m, cfg), t, cfg.train);
      save_stage(out.empty() ? cfg.paths.main_dir : out, r);
    } else if (*fin) {
      const fs::path mdir = main_ckpt.empty() ? cfg.paths.main_dir : main_ckpt;
      if (!fs::exists(mdir / "config.json"))
        throw StageError("finetune needs a main checkpoint; none found at " + mdir.string() + " (run train first)");
      const Checkpoint c = load_checkpoint(mdir);
      const Manifest m = open_corpus(corpus);
      auto r = finetune(training_split(m, cfg), c, cfg.train);
      save_stage(out.empty() ? cfg.paths.finetune_dir : out, r);
    } else if (*cnv || *evl) {
      fs::path cdir = ckpt;
      if (cdir.empty())
        cdir = fs::exists(fs::path(cfg.paths.finetune_dir) / "config.json") ? cfg.paths.finetune_dir
                                                                             : cfg.paths.main_dir;
      if (!fs::exists(cdir / "config.json"))
        throw StageError("no trained checkpoint at " + cdir.string() + " (run train first)");
      const Checkpoint c = load_checkpoint(cdir);
      const Manifest m = open_corpus(corpus);
      if (*cnv) {
        if (random_pairs_n > 0) {
          const auto held = split_dataset(load_dataset(m), cfg.train.holdout_every).second;
          const auto pairs = random_pairs(held, random_pairs_n, cfg.eval.seed);
          const auto res = batch_convert(m, pairs, c, out, common.jobs);
          std::cout << "converted " << res.results.size() << " pairs into " << out << "\n";
        } else {
          if (source.empty()) throw ValidationError("convert needs --source (or --random N)");
          ConversionTarget tgt{target, std::nullopt};
          if (!embedding.empty()) {
            tgt.embedding = read_tensor(embedding).to_vector();
            if (tgt.speaker.empty()) tgt.speaker = fs::path(embedding).stem().string();
          } else if (target.empty()) {
            throw ValidationError("convert needs --target or --embedding");
          }
          const Mat mel = convert(c, m, m.find(source), tgt);
          write_tensor(out, FeatureTensor::from_matrix(mel));
          std::cout << "wrote " << mel.rows() << "x" << mel.cols() << " mel to " << out << "\n";
        }
      } else {
        const auto held = split_dataset(load_dataset(m), cfg.train.holdout_every).second;
        EvalOptions eo;
        eo.seed = cfg.eval.seed;
        eo.jobs = common.jobs;
        eo.config_echo = cfg.dump();
        eo.probe.epochs = cfg.eval.probe_epochs;
        eo.probe.lr = cfg.eval.probe_lr;
        eo.probe.test_fraction = cfg.eval.probe_test_fraction;
        if (cfg.eval.reconstruction)
          for (const auto& u : held.items) eo.reconstruction_ids.push_back(u.id);
        const auto pairs = random_pairs(held, cfg.eval.pairs, cfg.eval.seed);
        const EvalReport r = eval_report(m, c, pairs, eo);
        const fs::path rpath = out.empty() ? cfg.paths.report : out;
        write_report(rpath, r);
        std::cout << "mcd=" << r.mcd_mean << "±" << r.mcd_std << " (n=" << r.mcd_count << ")"
                  << " self_mcd=" << r.self_mcd_mean << " baseline_mcd=" << r.baseline_mcd_mean
                  << " ses=" << r.ses_mean << " target_closer=" << r.target_closer_fraction
                  << " probe_content=" << r.probes.speaker_from_content
                  << " probe_raw=" << r.probes.speaker_from_raw
                  << " probe_prosody_emotion=" << r.probes.emotion_from_prosody;
        if (r.reconstruction && r.reconstruction->pearson_f0_mean)
          std::cout << " recon_r_f0=" << *r.reconstruction->pearson_f0_mean;
        if (r.reconstruction && r.reconstruction->pearson_energy_mean)
          std::cout << " recon_r_energy=" << *r.reconstruction->pearson_energy_mean;
        std::cout << " report=" << rpath.string() << "\n";
      }
    } else if (*ins) {
      if (dump_config || paths.empty()) std::cout << cfg.dump();
      for (const auto& p : paths) inspect_path(p);
    } else if (*plt) {
      const std::string svg = svg_plot(csv, title);
      std::ofstream f(out, std::ios::trunc);
      if (!f) throw IoError("cannot write " + out);
      f << svg;
    }
    return 0;
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 3);
  } catch (const StageError& e) {
    return fail("stage", e.what(), 4);
  } catch (const ValidationError& e) {
    return fail("validation", e.what(), 4);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 1);
  } catch (const IoError& e) {
    return fail("io", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}

}  // namespace savc
