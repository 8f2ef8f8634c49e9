#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fsar/fsar.hpp"

namespace fs = std::filesystem;
using namespace fsar;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3 };

struct RunFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> way, shot, query, episodes, eval_episodes;
  std::optional<double> gamma, lambda1, lambda2, lambda3, lambda4;
  std::optional<std::string> toggle_hsmr, toggle_spm, toggle_padm, fusion, constraint, precision;
  std::string data_dir, manifest, frames, prompts, out, checkpoint;
  std::string split = "test";
  std::size_t log_every = 100;
};

struct SynthFlags {
  SynthOptions options;
  std::string out = ".";
  std::string manifest, frames, prompts;
};

std::size_t thread_budget() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("FSAR_THREADS");
  if (!env || !*env) return hw;
  try {
    std::size_t used = 0;
    const long v = std::stol(env, &used);
    if (used != std::string(env).size() || v < 1) throw std::invalid_argument(env);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(std::string("FSAR_THREADS must be a positive integer, got '") + env + "'");
  }
}

std::string on_off(const std::string& v, const std::string& flag) {
  if (v == "on" || v == "true" || v == "1") return "true";
  if (v == "off" || v == "false" || v == "0") return "false";
  throw ConfigError(flag + " expects on or off, got '" + v + "'");
}

std::string json_text(const std::string& s) { return nlohmann::json(s).dump(); }

template <class V>
void add_opt(CLI::App* app, const std::string& name, std::optional<V>& target, const std::string& help) {
  app->add_option_function<V>(name, [&target](const V& v) { target = v; }, help);
}

void add_data_flags(CLI::App* app, RunFlags& f) {
  app->add_option("--data", f.data_dir, "directory holding frames.fse, prompts.fsp and manifest.json");
  app->add_option("--manifest", f.manifest, "manifest JSON");
  app->add_option("--frames", f.frames, "frame embedding container");
  app->add_option("--prompts", f.prompts, "prompt embedding container");
}

void add_run_flags(CLI::App* app, RunFlags& f) {
  add_data_flags(app, f);
  app->add_option("--config", f.config_path, "JSON config file");
  app->add_option("--set", f.sets, "override, section.key=value (repeatable)");
  add_opt(app, "--seed", f.seed, "base seed: model=seed, train=seed+1, eval=seed+2");
  add_opt(app, "--way", f.way, "classes per episode");
  add_opt(app, "--shot", f.shot, "support videos per class");
  add_opt(app, "--query", f.query, "query videos per class");
  add_opt(app, "--episodes", f.episodes, "episode budget of the command");
  add_opt(app, "--gamma", f.gamma, "alignment smoothing");
  add_opt(app, "--lambda1", f.lambda1, "prototype-anchor distance weight");
  add_opt(app, "--lambda2", f.lambda2, "semantic distance weight");
  add_opt(app, "--lambda3", f.lambda3, "motion consistency weight");
  add_opt(app, "--lambda4", f.lambda4, "prompt consistency weight");
  add_opt(app, "--toggle-hsmr", f.toggle_hsmr, "on | off");
  add_opt(app, "--toggle-spm", f.toggle_spm, "on | off");
  add_opt(app, "--toggle-padm", f.toggle_padm, "on | off");
  add_opt(app, "--fusion", f.fusion, "concat | concat+sum | concat+sum+gate");
  add_opt(app, "--constraint", f.constraint, "none | support | query | both");
  add_opt(app, "--precision", f.precision, "float | double");
  app->add_option("--out", f.out, "output directory");
}

/// Config file, then --set overrides, then dedicated flags.
ModelConfig resolve_config(const RunFlags& f, const char* episodes_key) {
  ModelConfig c = f.config_path.empty() ? ModelConfig{} : load_config(f.config_path);
  for (const auto& s : f.sets) c = c.with_override(s);
  auto set = [&](const std::string& key, const std::string& value) { c = c.with_override(key + "=" + value); };
  auto num = [](auto v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  if (f.seed) {
    set("run.model_seed", num(*f.seed));
    set("run.train_seed", num(*f.seed + 1));
    set("run.eval_seed", num(*f.seed + 2));
  }
  if (f.way) set("episode.way", num(*f.way));
  if (f.shot) set("episode.shot", num(*f.shot));
  if (f.query) set("episode.query", num(*f.query));
  if (f.episodes) set(episodes_key, num(*f.episodes));
  if (f.eval_episodes) set("run.eval_episodes", num(*f.eval_episodes));
  if (f.gamma) set("model.gamma", num(*f.gamma));
  if (f.lambda1) set("loss.lambda1", num(*f.lambda1));
  if (f.lambda2) set("loss.lambda2", num(*f.lambda2));
  if (f.lambda3) set("loss.lambda3", num(*f.lambda3));
  if (f.lambda4) set("loss.lambda4", num(*f.lambda4));
  if (f.toggle_hsmr) set("model.hsmr", on_off(*f.toggle_hsmr, "--toggle-hsmr"));
  if (f.toggle_spm) set("model.spm", on_off(*f.toggle_spm, "--toggle-spm"));
  if (f.toggle_padm) set("model.padm", on_off(*f.toggle_padm, "--toggle-padm"));
  if (f.fusion) set("model.fusion", json_text(*f.fusion));
  if (f.constraint) set("model.constraint", json_text(*f.constraint));
  if (f.precision) set("run.precision", json_text(*f.precision));
  return c;
}

std::pair<Manifest, EmbeddingStore> load_data(const RunFlags& f) {
  std::string manifest = f.manifest, frames = f.frames, prompts = f.prompts;
  if (!f.data_dir.empty()) {
    const fs::path d(f.data_dir);
    if (manifest.empty()) manifest = (d / "manifest.json").string();
    if (frames.empty()) frames = (d / "frames.fse").string();
    if (prompts.empty()) prompts = (d / "prompts.fsp").string();
  }
  if (manifest.empty() || frames.empty() || prompts.empty()) {
    throw ConfigError("data source missing: pass --data DIR or all of --manifest, --frames and --prompts");
  }
  return read_store(frames, prompts, manifest);
}

/// The stored embeddings fix T, C and R.
ModelConfig adopt_data_shape(ModelConfig c, const Manifest& m) {
  if (c.T != m.T || c.C != m.C || c.R != m.R) {
    std::cerr << "note: data.T/C/R taken from the manifest (" << m.T << ", " << m.C << ", " << m.R << ")\n";
    c = c.with_override("data.T=" + std::to_string(m.T))
            .with_override("data.C=" + std::to_string(m.C))
            .with_override("data.R=" + std::to_string(m.R));
  }
  return c;
}

void echo_config(const ModelConfig& c) { std::cout << "resolved config: " << c.to_json().dump() << std::endl; }

fs::path out_dir(const std::string& out, const char* fallback) {
  fs::path p(out.empty() ? fallback : out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory '" + p.string() + "': " + ec.message());
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

int cmd_synth(const SynthFlags& f) {
  const auto [m, s] = synth_dataset(f.options);
  const fs::path dir = out_dir(f.out, ".");
  const std::string frames = f.frames.empty() ? (dir / "frames.fse").string() : f.frames;
  const std::string prompts = f.prompts.empty() ? (dir / "prompts.fsp").string() : f.prompts;
  const std::string manifest = f.manifest.empty() ? (dir / "manifest.json").string() : f.manifest;
  write_store(m, s, frames, prompts, manifest);
  const auto& o = f.options;
  std::cout << "synth: " << o.n_classes() << " classes (" << o.train_classes << " train, " << o.val_classes
            << " val, " << o.test_classes << " test), " << s.video_count() << " videos, T=" << o.T << " C=" << o.C
            << " R=" << o.R << ", seed " << o.seed << "\n"
            << "wrote " << frames << ", " << prompts << ", " << manifest << std::endl;
  return kOk;
}

template <class T>
void check_finite_params(ModelParams<T>& p) {
  p.visit([](const std::string& name, Tensor<T>& t) {
    for (T v : t.value().data())
      if (!std::isfinite(v)) throw NumericError("parameter '" + name + "' became non-finite during training");
  });
}

template <class T>
int cmd_train(const RunFlags& f, ModelConfig cfg, const Manifest& m, const EmbeddingStore& s) {
  const fs::path dir = out_dir(f.out, "run");
  auto state = TrainState<T>::fresh(cfg);
  std::vector<double> window;
  const auto log = train(m, s, cfg, cfg.train_episodes, state, [&](const MetricsRow& r) {
    if (!std::isnan(r.accuracy)) window.push_back(r.accuracy);
    if (f.log_every && r.episode % f.log_every == 0) {
      double acc = 0.0;
      for (double a : window) acc += a;
      std::cout << "episode " << r.episode << "  total " << fixed(r.total) << "  L_CE " << fixed(r.l_ce)
                << "  mean acc " << fixed(window.empty() ? std::nan("") : acc / window.size()) << std::endl;
      window.clear();
    }
  });
  if (!log.empty() && state.skipped_episodes == log.size()) {
    throw NumericError("every training episode produced a non-finite loss");
  }
  check_finite_params(state.params);
  save_checkpoint(state.params, cfg, (dir / "model.fsck").string());
  write_metrics(log, (dir / "metrics.csv").string());
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
  std::cout << "trained " << log.size() << " episodes, " << state.optimizer_steps << " optimizer steps, "
            << state.skipped_episodes << " skipped\n"
            << "wrote " << (dir / "model.fsck").string() << ", " << (dir / "metrics.csv").string() << ", "
            << (dir / "config.json").string() << std::endl;
  return kOk;
}

template <class T>
int cmd_eval(const RunFlags& f, const ModelConfig& cfg, const Manifest& m, const EmbeddingStore& s) {
  auto params = ModelParams<T>::init(cfg);
  if (!f.checkpoint.empty()) load_checkpoint(params, cfg, f.checkpoint);
  const Split split = parse_split(f.split);
  const auto r = evaluate(m, s, params, cfg, cfg.eval_episodes, split, thread_budget());
  std::cout << "accuracy " << fixed(r.mean_accuracy) << " +/- " << fixed(r.ci95) << " (95% CI, "
            << r.per_episode.size() << " episodes, " << cfg.way << "-way " << cfg.shot << "-shot, " << cfg.query
            << " queries per class, split " << f.split << ", "
            << (f.checkpoint.empty() ? std::string("untrained parameters") : "checkpoint " + f.checkpoint) << ")"
            << std::endl;
  if (!f.out.empty()) {
    const fs::path path = out_dir(f.out, ".") / "eval.csv";
    std::ostringstream os;
    os << "split,episodes,way,shot,query,accuracy,ci95\n"
       << f.split << ',' << r.per_episode.size() << ',' << cfg.way << ',' << cfg.shot << ',' << cfg.query << ','
       << format_number(r.mean_accuracy) << ',' << format_number(r.ci95) << '\n';
    write_text(path, os.str());
    std::cout << "wrote " << path.string() << std::endl;
  }
  return kOk;
}

template <class T>
int cmd_ablate(const RunFlags& f, const std::string& table, const ModelConfig& cfg, const Manifest& m,
               const EmbeddingStore& s) {
  std::vector<AblationRow> rows;
  for (auto& r : ablation_grid(cfg))
    if (table == "all" || r.table == table) rows.push_back(r);
  if (rows.empty()) throw ConfigError("--table must be all, components, fusion or constraint, got '" + table + "'");
  std::cout << "ablation: " << rows.size() << " rows, " << cfg.train_episodes << " training and "
            << cfg.eval_episodes << " evaluation episodes each" << std::endl;
  const auto results = run_ablation<T>(m, s, rows, thread_budget());
  std::ostringstream csv;
  csv << "table,label,hsmr,spm,padm,fusion,constraint,accuracy,ci95,optimizer_steps,skipped_episodes\n";
  for (const auto& r : results) {
    const auto& c = r.row.config;
    csv << r.row.table << ',' << r.row.label << ',' << c.use_hsmr << ',' << c.use_spm << ',' << c.use_padm << ','
        << fusion_name(c.fusion) << ',' << constraint_name(c.constraint) << ',' << format_number(r.eval.mean_accuracy)
        << ',' << format_number(r.eval.ci95) << ',' << r.optimizer_steps << ',' << r.skipped_episodes << '\n';
    std::cout << r.row.table << "  " << r.row.label << "  accuracy " << fixed(r.eval.mean_accuracy) << " +/- "
              << fixed(r.eval.ci95) << std::endl;
  }
  const fs::path path = out_dir(f.out, "ablation") / "ablation.csv";
  write_text(path, csv.str());
  std::cout << "wrote " << path.string() << std::endl;
  return kOk;
}

int cmd_gradcheck() {
  const auto r = run_gradient_suite();
  for (const auto& c : r.cases) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-40s rel err %.2e (tol %.0e)  %s", c.name.c_str(), c.error, c.tolerance,
                  c.passed ? "ok" : "FAILED");
    std::cout << buf << "\n";
  }
  std::cout << r.cases.size() << " checks in " << fixed(r.seconds, 2) << " s: " << (r.passed() ? "all passed" : "FAILED")
            << std::endl;
  return r.passed() ? kOk : kNumeric;
}

int cmd_report(const std::vector<std::string>& files, const std::string& out, std::size_t window) {
  if (files.empty()) throw ConfigError("report needs at least one metrics CSV");
  std::vector<std::pair<std::string, std::vector<MetricsRow>>> runs;
  std::vector<RunSummary> summaries;
  for (const auto& file : files) {
    const fs::path p(file);
    std::string name = p.stem().string();
    if (name == "metrics" && p.has_parent_path()) name = p.parent_path().filename().string();
    runs.emplace_back(name, read_metrics(file));
    summaries.push_back(summarize_run(name, runs.back().second, window));
  }
  const fs::path dir = out_dir(out, "report");
  write_text(dir / "report.svg", render_svg(runs, window));
  const auto table = summary_table(summaries);
  write_text(dir / "summary.csv", table);
  std::cout << table << "wrote " << (dir / "report.svg").string() << ", " << (dir / "summary.csv").string()
            << std::endl;
  return kOk;
}

template <template <class> class Fn, class... Args>
int dispatch(const ModelConfig& cfg, Args&&... args) {
  if (cfg.precision == "double") return Fn<double>::run(cfg, std::forward<Args>(args)...);
  return Fn<float>::run(cfg, std::forward<Args>(args)...);
}

template <class T>
struct TrainFn {
  static int run(const ModelConfig& c, const RunFlags& f, const Manifest& m, const EmbeddingStore& s) {
    return cmd_train<T>(f, c, m, s);
  }
};
template <class T>
struct EvalFn {
  static int run(const ModelConfig& c, const RunFlags& f, const Manifest& m, const EmbeddingStore& s) {
    return cmd_eval<T>(f, c, m, s);
  }
};
template <class T>
struct AblateFn {
  static int run(const ModelConfig& c, const RunFlags& f, const std::string& table, const Manifest& m,
                 const EmbeddingStore& s) {
    return cmd_ablate<T>(f, table, c, m, s);
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Few-shot action recognition head: synthesize data, train, evaluate, ablate, check, report"};
  app.require_subcommand(1);

  SynthFlags sf;
  auto* synth = app.add_subcommand("synth", "write a synthetic embedding dataset");
  auto& so = sf.options;
  synth->add_option("--classes", so.train_classes, "training classes")->capture_default_str();
  synth->add_option("--val-classes", so.val_classes, "validation classes")->capture_default_str();
  synth->add_option("--test-classes", so.test_classes, "test classes")->capture_default_str();
  synth->add_option("--per-class", so.per_class, "videos per class")->capture_default_str();
  synth->add_option("--T", so.T, "frames per video")->capture_default_str();
  synth->add_option("--C", so.C, "embedding width")->capture_default_str();
  synth->add_option("--R", so.R, "prompt templates per class")->capture_default_str();
  synth->add_option("--appearance-sep", so.appearance_sep, "static class offset scale")->capture_default_str();
  synth->add_option("--motion-sep", so.motion_sep, "per-frame class drift scale")->capture_default_str();
  synth->add_option("--noise", so.noise, "frame noise standard deviation")->capture_default_str();
  synth->add_option("--prompt-jitter", so.prompt_jitter, "prompt noise standard deviation")->capture_default_str();
  synth->add_option("--seed", so.seed, "data seed")->capture_default_str();
  synth->add_option("--out", sf.out, "output directory")->capture_default_str();
  synth->add_option("--manifest", sf.manifest, "manifest path (default OUT/manifest.json)");
  synth->add_option("--frames", sf.frames, "frame container path (default OUT/frames.fse)");
  synth->add_option("--prompts", sf.prompts, "prompt container path (default OUT/prompts.fsp)");

  RunFlags tf;
  auto* train_cmd = app.add_subcommand("train", "train on the train split; writes checkpoint, metrics and config");
  add_run_flags(train_cmd, tf);
  train_cmd->add_option("--log-every", tf.log_every, "progress line interval in episodes")->capture_default_str();

  RunFlags ef;
  auto* eval_cmd = app.add_subcommand("eval", "episodic evaluation with a 95% confidence interval");
  add_run_flags(eval_cmd, ef);
  eval_cmd->add_option("--checkpoint", ef.checkpoint, "trained parameters (default: untrained)");
  eval_cmd->add_option("--split", ef.split, "train | val | test")->capture_default_str();

  RunFlags af;
  std::string table = "all";
  auto* ablate = app.add_subcommand("ablate", "train and evaluate every ablation row");
  add_run_flags(ablate, af);
  add_opt(ablate, "--eval-episodes", af.eval_episodes, "evaluation episodes per row");
  ablate->add_option("--table", table, "all | components | fusion | constraint")->capture_default_str();

  app.add_subcommand("gradcheck", "finite-difference gradient suite");

  std::vector<std::string> metrics;
  std::string report_out = "report";
  std::size_t window = 50;
  auto* report = app.add_subcommand("report", "SVG curves and summary table from metrics CSVs");
  report->add_option("metrics", metrics, "metrics CSV files");
  report->add_option("--out", report_out, "output directory")->capture_default_str();
  report->add_option("--window", window, "moving-average window")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (synth->parsed()) return cmd_synth(sf);
  if (app.got_subcommand("gradcheck")) return cmd_gradcheck();
  if (report->parsed()) return cmd_report(metrics, report_out, window);

  const bool is_train = train_cmd->parsed(), is_eval = eval_cmd->parsed();
  const RunFlags& f = is_train ? tf : is_eval ? ef : af;
  const char* episodes_key = is_eval ? "run.eval_episodes" : "run.train_episodes";
  ModelConfig cfg = resolve_config(f, episodes_key);
  const auto [m, s] = load_data(f);
  cfg = adopt_data_shape(cfg, m);
  echo_config(cfg);
  if (is_train) return dispatch<TrainFn>(cfg, f, m, s);
  if (is_eval) return dispatch<EvalFn>(cfg, f, m, s);
  return dispatch<AblateFn>(cfg, f, table, m, s);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const IntegrityError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const SamplingError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const LookupError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
}
