// scorelab command line: train, generate, decompose, sweep-theorem1,
// sweep-theorem2, verify, plot.
//
// Exit codes: 0 ok, 1 failed check or stage, 2 bad config / missing input,
// 3 divergence.

#include "scorelab/experiment/pipeline.hpp"
#include "scorelab/experiment/run_record.hpp"
#include "scorelab/experiment/svg.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace ex = scorelab::experiment;
namespace fs = std::filesystem;
using namespace scorelab;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> workers;
  std::optional<std::string> format;
};

ex::Config resolve(const Options& o) {
  ex::Config c = o.config.empty() ? ex::Config{} : ex::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (o.format) c.format = ex::parse_format(*o.format);
  ex::validate(c);
  return c;
}

fs::path out_dir(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out DIR is required");
  return o.out;
}

// Runs `body`; on any library error seals the run with a failure status
// before rethrowing.
template <class F>
int sealed(ex::RunWriter& w, F&& body) {
  try {
    const int rc = body();
    w.finish("complete");
    return rc;
  } catch (const DivergenceError& e) {
    w.finish("diverged");
    throw;
  } catch (const Error& e) {
    w.finish("failed");
    throw;
  }
}

ex::Checkpoint load_checkpoint(const ex::Config& c, const fs::path& out, std::string* digest) {
  const fs::path p = c.checkpoint.empty() ? out / "checkpoint.json" : fs::path(c.checkpoint);
  if (!fs::exists(p)) {
    if (c.model.mode == ex::ScoreMode::oracle) {
      *digest = "-";
      return {};
    }
    throw ex::MissingInput("checkpoint '" + p.string() + "' not found; run train first or set checkpoint:");
  }
  *digest = ex::sha256_file(p);
  return ex::checkpoint_from_json(ex::read_json(p));
}

std::string traces_jsonl(const std::vector<ex::TrainedStage>& stages) {
  std::string s;
  for (const auto& st : stages) s += ex::to_jsonl(st.trace, st.name);
  return s;
}

void write_training(ex::RunWriter& w, const ex::Config& c, const ex::TrainOutcome& r) {
  w.write_json("train", "checkpoint.json", ex::to_json(r.checkpoint));
  w.write("train", "trace.jsonl", traces_jsonl(r.stages));
  w.write_table("train", "train_summary", c.format, r.summary);
}

int cmd_train(const Options& o) {
  const auto c = resolve(o);
  ex::RunWriter w(out_dir(o), "train", c);
  return sealed(w, [&] {
    ex::TrainOutcome partial;
    ex::TrainOutcome r;
    try {
      r = ex::train(c, c.seed, &partial);
    } catch (const DivergenceError&) {
      w.write("train", "trace.jsonl", traces_jsonl(partial.stages));
      throw;
    }
    write_training(w, c, r);
    std::printf("train: mode=%s models=%zu\n", std::string(ex::to_string(c.model.mode)).c_str(),
                r.checkpoint.networks.size() + r.checkpoint.linear_models.size());
    for (std::size_t i = 0; i < r.summary.rows.size() && i < 10; ++i)
      std::printf("  %s samples=%s population_loss=%s\n", r.summary.text(i, "stage").c_str(),
                  r.summary.text(i, "samples_used").c_str(), r.summary.text(i, "population_loss").c_str());
    return 0;
  });
}

int cmd_generate(const Options& o) {
  const auto c = resolve(o);
  const auto dir = out_dir(o);
  std::string digest;
  auto ck = load_checkpoint(c, dir, &digest);
  ex::RunWriter w(dir, "generate", c);
  return sealed(w, [&] {
    const auto g = ex::generate_samples(c, ck, c.seed);
    w.write_table("generate", "samples", c.format, ex::samples_table(g.result.samples));
    ex::Json rep{{"checkpoint_sha256", digest},
                 {"score", std::string(ex::to_string(ck.mode))},
                 {"n_samples", g.result.samples.size()},
                 {"t0", c.grid.t0},
                 {"tv_vs_p_t0", g.tv ? ex::tv_json(*g.tv) : ex::Json(nullptr)}};
    w.write_json("generate", "generate_report.json", rep);
    if (g.tv)
      std::printf("generate: %zu samples, TV(p_t0, p_hat_t0) = %.4f\n", g.result.samples.size(), g.tv->value);
    else
      std::printf("generate: %zu samples\n", g.result.samples.size());
    return 0;
  });
}

int cmd_decompose(const Options& o) {
  const auto c = resolve(o);
  const auto dir = out_dir(o);
  std::string digest;
  auto ck = load_checkpoint(c, dir, &digest);
  ex::RunWriter w(dir, "decompose", c);
  return sealed(w, [&] {
    const auto d = ex::decompose_run(c, ck, c.seed);
    w.write_table("decompose", "decomposition", c.format, d.rows);
    w.write_table("decompose", "a_profile", c.format, d.all_steps);
    ex::Json rep{{"checkpoint_sha256", digest},
                 {"mode", std::string(to_string(d.mode))},
                 {"weighted_sum", d.weighted.sum},
                 {"inequality_violations", d.violations}};
    w.write_json("decompose", "decompose_report.json", rep);
    std::printf("decompose: %zu rows, sum_k A_k dt_k = %.6g, violations = %zu\n", d.rows.rows.size(),
                d.weighted.sum, d.violations);
    return d.violations == 0 ? 0 : 1;
  });
}

int cmd_sweep1(const Options& o) {
  const auto c = resolve(o);
  ex::RunWriter w(out_dir(o), "sweep-theorem1", c);
  return sealed(w, [&] {
    const auto s = ex::sweep_theorem1(c);
    w.write_table("sweep", "sweep", c.format, ex::sweep_table(s));
    w.write_json("sweep", "sweep_summary.json", ex::sweep_summary_json(s));
    if (!s.errors.empty()) {
      for (const auto& e : s.errors) std::fprintf(stderr, "sweep-theorem1: %s\n", e.c_str());
      if (s.divergence) throw DivergenceError("sweep-theorem1: a sweep point diverged", 0);
      throw Error("sweep-theorem1: a sweep point failed");
    }
    // error profile of the smallest eps, replicate 0
    const ex::PointResult* small = nullptr;
    for (const auto& p : s.points)
      if (p.plan.replicate == 0 && (!small || p.plan.eps < small->plan.eps)) small = &p;
    const auto pc = ex::point_config(c, small->plan);
    const auto d = ex::decompose_run(pc, small->training.checkpoint, small->plan.seed, false);
    w.write_table("sweep", "decomposition", c.format, d.rows);
    const std::string trace = traces_jsonl(small->training.stages);
    if (!trace.empty()) w.write("sweep", "trace.jsonl", trace);

    std::printf("%8s %10s %10s %10s %s\n", "eps", "median_tv", "se", "C*eps", "ok");
    for (const auto& e : s.summary)
      std::printf("%8.3f %10.5f %10.5f %10.5f %s\n", e.eps, e.median, e.se, e.bound, e.ok ? "yes" : "NO");
    if (s.fit) std::printf("log-log slope %.3f\n", s.fit->slope);
    std::printf("bound check: %s (%zu violations)\n", s.violations == 0 ? "PASS" : "FAIL", s.violations);
    return s.violations == 0 ? 0 : 1;
  });
}

int cmd_sweep2(const Options& o) {
  const auto c = resolve(o);
  ex::RunWriter w(out_dir(o), "sweep-theorem2", c);
  return sealed(w, [&] {
    const auto s = ex::sweep_theorem2(c);
    const auto table = ex::sweep2_table(s);
    w.write_table("sweep2", "sweep2", c.format, table);
    w.write_json("sweep2", "sweep2_summary.json",
                 {{"triangle_failures", s.triangle_failures},
                  {"early_leg_monotone", s.early_leg_monotone},
                  {"errors", s.errors}});
    if (!s.errors.empty()) {
      for (const auto& e : s.errors) std::fprintf(stderr, "sweep-theorem2: %s\n", e.c_str());
      if (s.divergence) throw DivergenceError("sweep-theorem2: a sweep point diverged", 0);
      throw Error("sweep-theorem2: a sweep point failed");
    }
    std::printf("%8s %10s %10s %10s %s\n", "t0", "leg_early", "tv_gen", "tv_total", "triangle");
    for (std::size_t i = 0; i < table.rows.size(); ++i)
      std::printf("%8.4g %10.5f %10.5f %10.5f %s\n", table.number(i, "t0"), table.number(i, "leg_early"),
                  table.number(i, "tv_generated"), table.number(i, "tv_total"),
                  table.text(i, "triangle_ok").c_str());
    const bool ok = s.triangle_failures == 0 && s.early_leg_monotone;
    std::printf("triangle failures: %zu, early leg monotone in t0: %s\n", s.triangle_failures,
                s.early_leg_monotone ? "yes" : "no");
    return ok ? 0 : 1;
  });
}

int cmd_verify(const Options& o) {
  const auto c = resolve(o);
  const auto v = ex::verify_lemmas(c);
  std::size_t failed = 0;
  std::printf("%-18s %-28s %12s %12s %10s %s\n", "check", "point", "analytic", "oracle", "rel_err", "result");
  for (const auto& r : v.checks) {
    failed += !r.pass;
    std::printf("%-18s %-28s %12.6g %12.6g %10.3g %s\n", r.lemma.c_str(), r.point.substr(0, 28).c_str(), r.analytic,
                r.oracle, r.rel_err, r.pass ? "pass" : "FAIL");
  }
  std::printf("%zu checks, %zu failed\n", v.checks.size(), failed);
  if (!o.out.empty()) {
    ex::RunWriter w(o.out, "verify", c);
    w.write_table("verify", "verify", c.format, ex::verify_table(v));
    w.finish("complete");
  }
  return failed == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// plot

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::optional<std::string> plot_tv(const ex::Table& t) {
  std::map<double, std::vector<double>> by_eps;
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    if (t.text(i, "status") == "ok") by_eps[t.number(i, "eps")].push_back(t.number(i, "tv"));
  if (by_eps.size() < 2) return std::nullopt;
  ex::svg::Series med{"median TV", {}, {}, kPalette[0], true};
  ex::svg::Series pts{"replicates", {}, {}, "#999999", true, false};
  for (const auto& [eps, v] : by_eps) {
    med.x.push_back(eps);
    med.y.push_back(median(v));
    for (double x : v) {
      pts.x.push_back(eps);
      pts.y.push_back(x);
    }
  }
  const double C = med.y.back() / med.x.back();  // map is ascending: back() is the largest eps
  ex::svg::Series bound{"C eps", med.x, {}, kPalette[1], false, true, true};
  for (double e : med.x) bound.y.push_back(C * e);
  ex::svg::Chart ch{"TV(p_t0, p_hat_t0) vs eps", "eps", "TV", true, true, {pts, med, bound}};
  return ex::svg::render(ch);
}

std::optional<std::string> plot_decomposition(const ex::Table& t) {
  if (t.rows.empty()) return std::nullopt;
  ex::svg::Series A{"A_k", {}, {}, "#000000", true};
  ex::svg::Stack st;
  st.labels = {"4 e_approx", "4 e_stat", "4 e_opt"};
  st.colors = {kPalette[0], kPalette[2], kPalette[3]};
  st.layers.assign(3, {});
  bool parts = true;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double k = t.number(i, "k");
    A.x.push_back(k);
    A.y.push_back(t.number(i, "A"));
    st.x.push_back(k);
    const char* cols[] = {"e_approx", "e_stat", "e_opt"};
    for (int j = 0; j < 3; ++j) {
      const double v = t.number(i, cols[j]);
      parts = parts && std::isfinite(v);
      st.layers[static_cast<std::size_t>(j)].push_back(4.0 * v);
    }
  }
  ex::svg::Chart ch{"error decomposition by step", "step k", "squared score error", false, false, {A}};
  if (parts) ch.stack = st;
  return ex::svg::render(ch);
}

std::optional<std::string> plot_trace(const std::string& jsonl) {
  std::map<std::string, ex::svg::Series> by_stage;
  std::vector<std::string> order;
  for (const auto& j : ex::parse_jsonl(jsonl)) {
    if (j.at("delta").is_null()) continue;
    const std::string st = j.at("stage").get<std::string>();
    if (!by_stage.count(st)) {
      if (order.size() >= 6) continue;
      order.push_back(st);
      by_stage[st] = {st, {}, {}, kPalette[(order.size() - 1) % 8]};
    }
    const double d = j.at("delta").get<double>();
    by_stage[st].x.push_back(j.at("cumulative").get<double>());
    by_stage[st].y.push_back(std::abs(d));
  }
  if (order.empty()) return std::nullopt;
  ex::svg::Chart ch{"SGD suboptimality", "samples used", "|L - L*|", true, true};
  for (const auto& s : order) ch.series.push_back(by_stage[s]);
  return ex::svg::render(ch);
}

std::optional<std::string> plot_sweep2(const ex::Table& t) {
  std::map<double, std::vector<double>> early, gen, total;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.text(i, "status") != "ok") continue;
    const double t0 = t.number(i, "t0");
    early[t0].push_back(t.number(i, "leg_early"));
    gen[t0].push_back(t.number(i, "tv_generated"));
    total[t0].push_back(t.number(i, "tv_total"));
  }
  if (early.empty()) return std::nullopt;
  auto series = [](const std::map<double, std::vector<double>>& m, std::string label, const char* color) {
    ex::svg::Series s{std::move(label), {}, {}, color, true};
    for (const auto& [x, v] : m) {
      s.x.push_back(x);
      s.y.push_back(median(v));
    }
    return s;
  };
  ex::svg::Chart ch{"TV legs vs t0", "t0", "TV", true, false,
                    {series(early, "TV(p_0, p_t0)", kPalette[0]), series(gen, "TV(p_t0, p_hat)", kPalette[2]),
                     series(total, "TV(p_0, p_hat)", kPalette[1])}};
  return ex::svg::render(ch);
}

int cmd_plot(const Options& o) {
  const auto dir = out_dir(o);
  if (!fs::exists(dir / ex::kRunFile)) throw ex::MissingInput("plot: no run.json in '" + dir.string() + "'");
  const auto rec = ex::run_record_from_json(ex::read_json(dir / ex::kRunFile));
  if (rec.status != "complete") throw ex::MissingInput("plot: run status is '" + rec.status + "', not complete");
  if (!fs::exists(dir / "config.resolved.yaml")) throw ex::MissingInput("plot: config.resolved.yaml missing");
  auto c = ex::load_config((dir / "config.resolved.yaml").string());

  std::vector<std::pair<std::string, std::string>> figures;
  if (auto t = ex::read_table(dir, "sweep"))
    if (auto s = plot_tv(*t)) figures.emplace_back("tv_vs_eps.svg", *s);
  if (auto t = ex::read_table(dir, "decomposition"))
    if (auto s = plot_decomposition(*t)) figures.emplace_back("decomposition.svg", *s);
  if (fs::exists(dir / "trace.jsonl"))
    if (auto s = plot_trace(ex::read_file(dir / "trace.jsonl"))) figures.emplace_back("sgd_trace.svg", *s);
  if (auto t = ex::read_table(dir, "sweep2"))
    if (auto s = plot_sweep2(*t)) figures.emplace_back("tv_legs_vs_t0.svg", *s);
  if (figures.empty()) throw ex::MissingInput("plot: nothing to plot in '" + dir.string() + "'");

  ex::RunWriter w(dir, rec.command, c);
  for (const auto& [name, body] : figures) {
    w.write("plot", name, body);
    std::printf("plot: %s\n", (dir / name).string().c_str());
  }
  w.finish("complete");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scorelab: score-based diffusion experiments"};
  app.require_subcommand(1);
  Options o;

  auto add = [&](const char* name, const char* help, bool needs_config) {
    auto* s = app.add_subcommand(name, help);
    auto* cfg = s->add_option("--config", o.config, "YAML config file")->check(CLI::ExistingFile);
    if (needs_config) cfg->required();
    s->add_option("--seed", o.seed, "master seed (overrides the config)");
    s->add_option("--out", o.out, "run directory");
    s->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
    s->add_option("--format", o.format, "table format")->check(CLI::IsMember({"csv", "json"}));
    return s;
  };
  auto* train = add("train", "fit the score model", true);
  auto* gen = add("generate", "run the reverse sampler from a checkpoint", true);
  auto* dec = add("decompose", "score error decomposition of a checkpoint", true);
  auto* sw1 = add("sweep-theorem1", "TV against eps with T, K, n scaled from eps", true);
  auto* sw2 = add("sweep-theorem2", "TV legs against the early-stopping time t0", true);
  auto* ver = add("verify", "run the lemma checks", false);
  auto* plot = add("plot", "SVG figures from a completed run directory", false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(o);
    if (gen->parsed()) return cmd_generate(o);
    if (dec->parsed()) return cmd_decompose(o);
    if (sw1->parsed()) return cmd_sweep1(o);
    if (sw2->parsed()) return cmd_sweep2(o);
    if (ver->parsed()) return cmd_verify(o);
    if (plot->parsed()) return cmd_plot(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ex::MissingInput& e) {
    std::fprintf(stderr, "missing input: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
