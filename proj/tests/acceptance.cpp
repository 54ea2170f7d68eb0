// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "savc/asa.hpp"
#include "savc/checkpoint.hpp"
#include "savc/losses.hpp"
#include "savc/metrics.hpp"
#include "savc/report.hpp"
#include "savc/train.hpp"
#include "savc_tools/cli.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace savc;
using namespace savc::asa;
using savc::testing::random_mat;
using savc::testing::slurp;
using savc::testing::TempDir;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// ---------------------------------------------------------------- 1

Outcome asa_algebra() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<int> frames(8, 64), chans(2, 12), bsize(2, 6);
  std::uniform_real_distribution<double> scale(0.05, 4.0), shift(-5.0, 5.0);
  const PerturbMode modes[] = {PerturbMode::learned_scale, PerturbMode::literal, PerturbMode::fixed};

  int instances = 0, clamped = 0;
  double worst_round = 0, worst_content = 0, worst_stat = 0;
  bool content_ok = true;
  for (int trial = 0; instances < 1000; ++trial) {
    const int w = frames(gen), c = chans(gen), b = bsize(gen);
    std::vector<Mat> batch;
    for (int i = 0; i < b; ++i) {
      Mat x = random_mat(w, c, gen, scale(gen));
      x.rowwise() += Vec::NullaryExpr(c, [&] { return shift(gen); }).transpose();
      batch.push_back(std::move(x));
    }
    auto params = PerturbParams::initial(c, modes[trial % 3]);
    CounterRng rng(std::uint64_t(trial) + 1);
    AsaCache cache;
    const auto out = asa_forward(batch, params, rng, &cache);

    for (int i = 0; i < b; ++i, ++instances) {
      const auto s = channel_stats(batch[i]);
      const Mat n = instance_normalize(batch[i], s);
      worst_round = std::max(worst_round, (style_transform(n, s.mu, s.sigma) - batch[i]).cwiseAbs().maxCoeff());

      const Mat back = instance_normalize(out[i], channel_stats(out[i]));
      const double err = (back - n).cwiseAbs().maxCoeff();
      // A sigma sitting on the kSigmaMin clamp is shrunk by ~eps^2 / (2 kSigmaMin^2)
      // when renormalized; those instances get that analytic bound instead.
      double tol = 1e-4;
      if (cache.samples[i].clamped.any()) {
        ++clamped;
        tol = std::max(tol, n.cwiseAbs().maxCoeff() * 0.5 * std::pow(kStatEps / kSigmaMin, 2) * 1.01);
      }
      if (err > tol) content_ok = false;
      if (!cache.samples[i].clamped.any()) worst_content = std::max(worst_content, err);

      const auto& smp = cache.samples[i];
      const auto real = channel_stats(style_transform(n, smp.mu, smp.sigma));
      worst_stat = std::max({worst_stat, (real.mu - smp.mu).cwiseAbs().maxCoeff(),
                             (real.sigma - smp.sigma).cwiseAbs().maxCoeff()});
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_round <= 1e-5 && content_ok && worst_content <= 1e-4 && worst_stat <= 1e-4 && secs < 30;
  o.detail = std::to_string(instances) + " instances (" + std::to_string(clamped) +
             " clamped), round trip " + fmt(worst_round, 3) + ", content " + fmt(worst_content, 3) +
             ", statistics " + fmt(worst_stat, 3) + ", " + fmt(secs, 3) + " s";
  return o;
}

// ---------------------------------------------------------------- 2

struct FdTally {
  int checked = 0;
  int bad = 0;
  double worst = 0;
  void add(double analytic, double fd, double tol = 1e-3) {
    const double e = rel_err(analytic, fd, 1e-4);
    worst = std::max(worst, e);
    ++checked;
    if (e >= tol) ++bad;
  }
};

template <typename F>
void fd_matrix(Mat& x, const Mat& analytic, F loss, FdTally& t, double h) {
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    double& v = x.data()[k];
    const double orig = v;
    v = orig + h;
    const double hi = loss();
    v = orig - h;
    const double lo = loss();
    v = orig;
    t.add(analytic.data()[k], (hi - lo) / (2 * h));
  }
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  const double h = 1e-3;
  FdTally t;
  std::mt19937_64 gen(31);

  // Loss terms on their own.
  {
    Mat a = random_mat(6, 4, gen);
    const Mat b = random_mat(6, 4, gen);
    fd_matrix(a, loss_rec_grad(a, b), [&] { return loss_rec(a, b); }, t, h);
    fd_matrix(a, loss_dis_grad(a, b), [&] { return loss_dis(a, b); }, t, h);
    const Vec y = one_hot(1, 5);
    Mat s = random_mat(5, 1, gen);
    const Vec yt = random_mat(5, 1, gen).col(0);
    fd_matrix(s, loss_pred_grad(y, s.col(0)), [&] { return loss_pred(y, yt, s.col(0)); }, t, h);
  }

  // GRL: forward is the identity, backward the reversed chain.
  bool identity = true;
  {
    const Mat x = random_mat(5, 3, gen);
    for (double lambda : {1.0, 0.5}) {
      GradientReversal g(lambda);
      identity = identity && (g.forward(x).array() == x.array()).all();
      const Mat d = random_mat(5, 3, gen);
      identity = identity && (g.backward(d).array() == (-lambda * d).array()).all();
    }
  }

  // Whole student objective on a tiny model.
  TempDir dir("acc_fd");
  const auto spec = savc::testing::small_spec();
  const Dataset data = load_dataset(syndata::make_corpus(spec, dir.path()));
  const EncoderConfig mcfg = savc::testing::tiny_model(spec);
  std::vector<const Utterance*> batch{&data.items[0], &data.items[5], &data.items[9]};
  for (auto objective : {StudentObjective::main, StudentObjective::finetune}) {
    for (double grl : {1.0, 0.5}) {
      TrainConfig cfg;
      cfg.batch_size = 3;
      cfg.grl_lambda = grl;
      SavcModel m(mcfg, data.speakers, data.emotions, 3);
      CounterRng nudge(3);
      m.asa_i_mu.value.col(0) += 0.3 * Vec::NullaryExpr(mcfg.unit_channels, [&] { return nudge.normal(); });
      m.asa_i_sigma.value.col(0) += 0.3 * Vec::NullaryExpr(mcfg.unit_channels, [&] { return nudge.normal(); });
      for (auto& [n, p] : m.all_params()) p->zero_grad();
      CounterRng rng(55);
      student_batch_gradients(m, batch, cfg, objective, rng);
      const auto loss = [&] {
        CounterRng r(55);
        return student_batch_loss(m, batch, cfg, objective, r);
      };
      for (auto& [name, p] : m.all_params()) {
        const bool is_asa = name.rfind("asa.", 0) == 0;
        const bool frozen = name.rfind("teacher", 0) == 0 || name.rfind("contour_head", 0) == 0;
        const Eigen::Index stride = std::max<Eigen::Index>(1, p->value.size() / 12);
        for (Eigen::Index k = 0; k < p->value.size(); k += stride) {
          double& v = p->value.data()[k];
          const double orig = v;
          v = orig + h;
          const double hi = loss();
          v = orig - h;
          const double lo = loss();
          v = orig;
          const double fd = (hi - lo) / (2 * h);
          const double an = p->grad.data()[k];
          if (frozen) {
            if (an != 0.0) ++t.bad;
            continue;
          }
          t.add(an, is_asa ? -grl * fd : fd);
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = identity && t.bad == 0 && t.checked > 200 && secs < 60;
  o.detail = std::string("GRL forward identity ") + (identity ? "exact" : "BROKEN") + ", " +
             std::to_string(t.checked) + " gradient entries, worst rel err " + fmt(t.worst, 3) + ", " +
             std::to_string(t.bad) + " over 1e-3, " + fmt(secs, 3) + " s";
  return o;
}

// ---------------------------------------------------------------- 3

Outcome sampling_calibration() {
  const int n = 10000;
  const int c = 4;
  ChannelStats s{Vec(c), Vec(c)};
  s.mu << -1.5, 0.0, 0.7, 3.0;
  s.sigma << 0.8, 1.0, 2.0, 3.5;
  BatchSpread sp{Vec(c), Vec(c)};
  sp.mu << 0.3, 0.5, 1.0, 0.05;
  sp.sigma << 0.1, 0.2, 0.4, 0.6;  // at least 5 spreads above the clamp
  CounterRng rng(404);
  std::vector<Vec> mus, sigmas;
  for (int i = 0; i < n; ++i) {
    const auto d = sample_stats(s, sp, rng);
    mus.push_back(d.mu);
    sigmas.push_back(d.sigma);
  }
  double worst_z = 0;  // in standard errors
  for (int k = 0; k < c; ++k) {
    for (int which = 0; which < 2; ++which) {
      const auto& draws = which ? sigmas : mus;
      const double centre = which ? s.sigma(k) : s.mu(k);
      const double spread = which ? sp.sigma(k) : sp.mu(k);
      double sum = 0, sq = 0;
      for (const auto& v : draws) sum += v(k);
      const double mean = sum / n;
      for (const auto& v : draws) sq += (v(k) - mean) * (v(k) - mean);
      const double sd = std::sqrt(sq / (n - 1));
      worst_z = std::max(worst_z, std::abs(mean - centre) / (spread / std::sqrt(double(n))));
      worst_z = std::max(worst_z, std::abs(sd - spread) / (spread / std::sqrt(2.0 * (n - 1))));
    }
  }

  // Floor: a spread that would push most draws below zero.
  ChannelStats tiny{Vec::Zero(c), Vec::Constant(c, 1e-4)};
  BatchSpread wide{Vec::Ones(c), Vec::Constant(c, 5.0)};
  double min_sigma = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) min_sigma = std::min(min_sigma, sample_stats(tiny, wide, rng).sigma.minCoeff());
  for (const auto& v : sigmas) min_sigma = std::min(min_sigma, v.minCoeff());

  Outcome o;
  o.pass = worst_z <= 4.0 && min_sigma >= kSigmaMin;
  o.detail = std::to_string(n) + " draws x " + std::to_string(c) + " channels, worst moment deviation " +
             fmt(worst_z, 3) + " SE, min sigma_t " + fmt(min_sigma, 3);
  return o;
}

// ---------------------------------------------------------------- 4

// Every monotone path, cost accumulated start to end.
double exhaustive_dtw(const std::vector<std::vector<double>>& d, std::size_t i, std::size_t j, double acc) {
  acc += d[i][j];
  const std::size_t n = d.size(), m = d[0].size();
  if (i == n - 1 && j == m - 1) return acc;
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < n && j + 1 < m) best = std::min(best, exhaustive_dtw(d, i + 1, j + 1, acc));
  if (i + 1 < n) best = std::min(best, exhaustive_dtw(d, i + 1, j, acc));
  if (j + 1 < m) best = std::min(best, exhaustive_dtw(d, i, j + 1, acc));
  return best;
}

Outcome metric_oracles() {
  std::vector<std::string> failures;
  const auto check = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  std::mt19937_64 gen(5);
  const Mat x = random_mat(30, 4, gen);
  const double m = mcd(x, x.array() + 0.1);
  check(std::abs(m - 1.2284) <= 1e-4, "mcd " + fmt(m, 8));
  check(std::abs(m - kMcdScale * 0.2) < 1e-12, "mcd closed form");

  const Vec a = random_mat(50, 1, gen).col(0);
  const auto p1 = pearson(a, a), p2 = pearson(a, -a);
  check(p1 && std::abs(*p1 - 1.0) < 1e-12, "pearson(a,a)");
  check(p2 && std::abs(*p2 + 1.0) < 1e-12, "pearson(a,-a)");

  Vec u(3), v(3);
  u << 1, 0, 0;
  v << 0, 2, 0;
  check(std::abs(cosine_sim(u, v)) < 1e-15, "cosine orthogonal");
  check(std::abs(cosine_sim(u, 3 * u) - 1.0) < 1e-15, "cosine parallel");
  check(std::abs(cosine_sim(u, -u) + 1.0) < 1e-15, "cosine opposite");
  Vec w(2), z(2);
  w << 1, 0;
  z << 1, 1;
  check(std::abs(cosine_sim(w, z) - 1.0 / std::sqrt(2.0)) < 1e-15, "cosine 45 degrees");

  // Integer-valued frames keep every frame distance exactly representable up
  // to the final sqrt, so the two computations must agree bit for bit.
  std::uniform_int_distribution<int> len(1, 6), coord(-3, 3), dims(1, 3);
  int exact = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const int n = len(gen), k = len(gen), d = dims(gen);
    Mat p(n, d), q(k, d);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = coord(gen);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = coord(gen);
    std::vector<std::vector<double>> dist(n, std::vector<double>(k));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        double s = 0;
        for (int c = 0; c < d; ++c) s += (p(i, c) - q(j, c)) * (p(i, c) - q(j, c));
        dist[i][j] = std::sqrt(s);
      }
    const double oracle = exhaustive_dtw(dist, 0, 0, 0.0);
    if (dtw_align(p, q).cost == oracle) ++exact;
  }
  check(exact == 20, "dtw exact on " + std::to_string(exact) + "/20");

  Outcome o;
  o.pass = failures.empty();
  o.detail = "mcd " + fmt(m, 8) + " dB, pearson/cosine analytic, dtw exact on " + std::to_string(exact) + "/20";
  for (const auto& f : failures) o.detail += "; failed: " + f;
  return o;
}

// ---------------------------------------------------------------- 5-8

int cli(const fs::path& cwd, std::vector<std::string> args) {
  const auto old = fs::current_path();
  fs::current_path(cwd);
  std::ostringstream sink;
  auto* buf = std::cout.rdbuf(sink.rdbuf());
  args.insert(args.begin(), "savc");
  int code = 1;
  try {
    code = cli_main(args);
  } catch (...) {
  }
  std::cout.rdbuf(buf);
  fs::current_path(old);
  return code;
}

struct PipelineRun {
  bool ok = false;
  std::string failed_step;
  double main_seconds = 0;
};

PipelineRun full_pipeline(const fs::path& cwd, const std::string& cfg) {
  PipelineRun r;
  const std::vector<std::string> common{"-c", cfg, "--jobs", "1"};
  for (const std::string step : {"gen-data", "pretrain-teacher", "train", "finetune", "eval"}) {
    std::vector<std::string> args{step};
    args.insert(args.end(), common.begin(), common.end());
    const auto t0 = Clock::now();
    if (cli(cwd, args) != 0) {
      r.failed_step = step;
      return r;
    }
    if (step == "train") r.main_seconds = seconds_since(t0);
  }
  r.ok = true;
  return r;
}

std::vector<fs::path> files_under(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

void print(int n, const std::string& title, const Outcome& o) {
  std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << title << ": " << o.detail
            << std::endl;
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("threw: ") + e.what()};
  }
}

}  // namespace

int main() {
  bool all = true;
  const auto report = [&](int n, const std::string& title, const Outcome& o) {
    print(n, title, o);
    all = all && o.pass;
  };

  report(1, "ASA algebra", guarded(asa_algebra));
  report(2, "GRL and loss gradients", guarded(gradient_checks));
  report(3, "sampling calibration", guarded(sampling_calibration));
  report(4, "metric oracles", guarded(metric_oracles));

  const std::string cfg = std::string(SAVC_CONFIG_DIR) + "/default.cfg";
  TempDir run_a("acc_a"), run_b("acc_b");
  const auto a = full_pipeline(run_a.path(), cfg);

  // Criterion 5 extras live outside runs/ so the reproducibility comparison
  // covers exactly what a plain pipeline writes.
  Outcome c5, c6, c7;
  if (!a.ok) {
    c5 = c6 = c7 = {false, "pipeline failed at " + a.failed_step};
  } else {
    c5 = guarded([&] {
      const auto t0 = Clock::now();
      const std::vector<std::string> common{"-c", cfg, "--jobs", "1"};
      auto args = [&](std::vector<std::string> v) {
        v.insert(v.end(), common.begin(), common.end());
        return v;
      };
      if (cli(run_a.path(), args({"train", "--teacher", "runs/teacher", "--out", "extra/main_off", "--set",
                                  "train.asa_mode=off"})) != 0)
        return Outcome{false, "asa_mode=off training failed"};
      if (cli(run_a.path(), args({"eval", "--ckpt", "runs/main", "--out", "extra/main.json"})) != 0 ||
          cli(run_a.path(), args({"eval", "--ckpt", "extra/main_off", "--out", "extra/main_off.json"})) != 0)
        return Outcome{false, "probe evaluation failed"};
      const auto with = load_report(run_a.path() / "extra/main.json");
      const auto without = load_report(run_a.path() / "extra/main_off.json");
      const double secs = a.main_seconds + seconds_since(t0);
      const double raw = with.probes.speaker_from_raw;
      const double zc = with.probes.speaker_from_content, zc_off = without.probes.speaker_from_content;
      Outcome o;
      o.pass = raw >= 0.9 && zc <= 0.25 && zc_off - zc >= 0.1 && secs < 900;
      o.detail = "speaker probe raw " + fmt(raw) + " (>= 0.9), Z_Fc with ASA " + fmt(zc) + " (<= 0.25), without " +
                 fmt(zc_off) + " (gap " + fmt(zc_off - zc) + " >= 0.1), " + fmt(secs, 4) + " s";
      return o;
    });

    const auto final_report = load_report(run_a.path() / "runs/report.json");
    c6 = guarded([&] {
      const auto& r = final_report;
      Outcome o;
      o.pass = r.pairs.size() == 100 && r.target_closer_fraction >= 0.9 && r.self_mcd_mean < r.baseline_mcd_mean;
      o.detail = std::to_string(r.pairs.size()) + " pairs, target closer " + fmt(r.target_closer_fraction) +
                 " (>= 0.9), self MCD " + fmt(r.self_mcd_mean) + " vs source-target MCD " +
                 fmt(r.baseline_mcd_mean);
      return o;
    });
    c7 = guarded([&] {
      const auto& rec = final_report.reconstruction;
      if (!rec || !rec->pearson_f0_mean || !rec->pearson_energy_mean)
        return Outcome{false, "no reconstruction correlations in the report"};
      Outcome o;
      o.pass = *rec->pearson_f0_mean >= 0.8 && *rec->pearson_energy_mean >= 0.8;
      o.detail = std::to_string(rec->utterances) + " held-out utterances, pitch r " + fmt(*rec->pearson_f0_mean) +
                 ", energy r " + fmt(*rec->pearson_energy_mean) + " (both >= 0.8)";
      return o;
    });
  }
  report(5, "disentanglement", c5);
  report(6, "conversion direction", c6);
  report(7, "prosody consistency", c7);

  const Outcome c8 = guarded([&] {
    if (!a.ok) return Outcome{false, "first pipeline failed at " + a.failed_step};
    const auto b = full_pipeline(run_b.path(), cfg);
    if (!b.ok) return Outcome{false, "second pipeline failed at " + b.failed_step};
    const auto fa = files_under(run_a.path() / "runs"), fb = files_under(run_b.path() / "runs");
    if (fa != fb) return Outcome{false, "file sets differ"};
    // Step logs carry wall_ms by design; they are compared on the loss
    // columns only, everything else byte for byte.
    std::vector<std::string> differ;
    int logs = 0;
    for (const auto& f : fa) {
      const auto pa = run_a.path() / "runs" / f, pb = run_b.path() / "runs" / f;
      if (f.filename().string().ends_with(".metrics.csv")) {
        ++logs;
        const auto la = read_metrics_csv(pa), lb = read_metrics_csv(pb);
        bool same = la.size() == lb.size();
        for (std::size_t i = 0; same && i < la.size(); ++i)
          same = la[i].step == lb[i].step && la[i].rec == lb[i].rec && la[i].dis == lb[i].dis &&
                 la[i].pred == lb[i].pred && la[i].total == lb[i].total;
        if (!same) differ.push_back(f.string());
      } else if (slurp(pa) != slurp(pb)) {
        differ.push_back(f.string());
      }
    }
    Outcome o;
    o.pass = differ.empty();
    o.detail = std::to_string(fa.size() - logs) + " checkpoint/report files byte-compared, " + std::to_string(logs) +
               " step logs compared without wall_ms, " + std::to_string(differ.size()) + " differ";
    for (const auto& d : differ) o.detail += " " + d;
    return o;
  });
  report(8, "reproducibility", c8);

  return all ? 0 : 1;
}
