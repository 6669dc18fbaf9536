#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rnntd/baselines.hpp"
#include "rnntd/checkpoint.hpp"
#include "rnntd/errors.hpp"
#include "rnntd/eval.hpp"
#include "rnntd/events.hpp"
#include "rnntd/gradcheck.hpp"
#include "rnntd/manifest.hpp"
#include "rnntd/model.hpp"
#include "rnntd/simulator.hpp"
#include "rnntd/trainer.hpp"

namespace rnntd::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kDataError = 2, kNumericalError = 3 };

namespace fs = std::filesystem;

namespace detail {

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
  return s;
}

/// Expands `--config FILE` (plain key=value lines, '#' comments) into flags.
/// Keys become --key; flags already on the command line win.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  auto it = std::find(args.begin(), args.end(), "--config");
  if (it == args.end()) return args;
  if (it + 1 == args.end()) throw CLI::ArgumentMismatch("--config needs a file name");
  const std::string path = *(it + 1);
  args.erase(it, it + 2);
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string flag = "--" + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) {
      args.push_back(flag);
      args.push_back(value);
    }
  }
  return args;
}

inline nlohmann::json options_json(const CLI::App& app) {
  nlohmann::json j = nlohmann::json::object();
  std::istringstream lines(app.config_to_str(true, false));
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    j[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return j;
}

inline MarkVocabulary load_vocabulary(const fs::path& dir) {
  std::ifstream in(dir / "vocab.txt");
  if (!in) throw DataError("missing " + (dir / "vocab.txt").string());
  return MarkVocabulary::read(in);
}

inline std::vector<EventSequence> load_sequences(const fs::path& file, const MarkVocabulary& vocab) {
  std::ifstream in(file);
  if (!in) throw DataError("missing " + file.string() + (file.stem() == "corpus" ? "" : " (run `split` first)"));
  try {
    return read_corpus(in, vocab);
  } catch (const DataError& e) {
    throw DataError(file.string() + ": " + e.what());
  }
}

inline void write_sequences(const fs::path& file, const std::vector<EventSequence>& seqs, const MarkVocabulary& vocab) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  write_corpus(out, seqs, vocab);
}

inline void write_vocabulary(const fs::path& dir, const MarkVocabulary& vocab) {
  std::ofstream out(dir / "vocab.txt", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "vocab.txt").string());
  vocab.write(out);
}

inline nlohmann::json load_meta(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) return nlohmann::json::object();
  return nlohmann::json::parse(in);
}

inline void write_json(const fs::path& file, const nlohmann::json& j) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

inline void write_splits(const fs::path& dir, const CorpusSplit& s, const MarkVocabulary& vocab) {
  write_sequences(dir / "train.tsv", s.train, vocab);
  write_sequences(dir / "validation.tsv", s.validation, vocab);
  write_sequences(dir / "test.tsv", s.test, vocab);
}

/// A checkpoint loaded as a predictor plus whatever likelihood it supports.
struct LoadedModel {
  std::string variant;
  MarkVocabulary vocabulary;
  std::unique_ptr<Predictor> predictor;
  std::optional<ModelParams> neural;
  std::optional<PointProcessModel> point_process;
  std::optional<MarkovModel> markov;

  /// Mean NLL per transition on a split, when the model defines one. Markov
  /// chains report the mark log-loss only.
  double mean_nll_on(std::span<const EventSequence> data) const {
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto& s : data) {
      if (s.size() < 2) continue;
      steps += s.size() - 1;
      if (neural) {
        total += nll(*neural, s).value;
      } else if (point_process) {
        total += point_process_nll(*point_process, s);
      } else {
        std::vector<std::size_t> history;
        for (std::size_t j = 0; j + 1 < s.size(); ++j) {
          history.push_back(s.events[j].mark);
          total -= std::log(markov->probabilities(history)[s.events[j + 1].mark]);
        }
      }
    }
    if (steps == 0) throw DataError("split has no transitions");
    return total / static_cast<double>(steps);
  }
};

inline std::string neural_name(const ModelParams& p, const std::string& variant) {
  if (variant == "rmtpp") return "rmtpp";
  return p.shaping.kind == ShapingKind::Constant ? "rnn-td(c)" : "rnn-td(exp)";
}

inline LoadedModel load_any(const fs::path& path, const ExpectationOptions& expectation = {}) {
  const auto c = Checkpoint::load(path);
  LoadedModel m;
  m.variant = c.text("variant");
  m.vocabulary = MarkVocabulary(c.strings("vocabulary"));
  if (m.variant == "rnn-td" || m.variant == "rmtpp") {
    m.neural = load_model(c);
    m.predictor = std::make_unique<NeuralPredictor>(*m.neural, neural_name(*m.neural, m.variant), expectation);
  } else if (parse_point_process(m.variant)) {
    m.point_process = load_point_process(c);
    m.predictor = std::make_unique<PointProcessPredictor>(*m.point_process);
  } else if (m.variant == "mc1" || m.variant == "mc2" || m.variant == "mc3") {
    m.markov = load_markov(c);
    m.predictor = std::make_unique<MarkovPredictor>(*m.markov);
  } else {
    throw DataError("checkpoint " + path.string() + ": unknown variant '" + m.variant + "'");
  }
  if (m.predictor->marks() != m.vocabulary.size())
    throw DataError("checkpoint " + path.string() + ": vocabulary size does not match the model");
  return m;
}

inline ExpectationOptions expectation_from(const std::string& mode) {
  ExpectationOptions o;
  if (mode == "raw") o.mode = ExpectationMode::Raw;
  else if (mode != "normalized") throw DataError("unknown expectation mode '" + mode + "' (normalized|raw)");
  return o;
}

inline std::string fmt(const char* format, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, x);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommand options

struct IngestOptions {
  std::string input, out, preset;
  std::optional<double> gap_hours;
  std::optional<std::size_t> min_length, top_k, max_length;
  std::int64_t epoch_unix = 0;
  std::string manifest;
};

struct SplitOptions {
  std::string data;
  std::uint64_t seed = 1;
  std::string manifest;
};

struct SimulateOptions {
  std::string spec, out;
  std::size_t n = 1000;
  std::optional<std::uint64_t> seed;
  std::string manifest;
};

struct TrainOptions {
  std::string data, model = "rnn-td", shaping = "const", out, report, manifest, calendar = "on";
  std::size_t hidden = 16, embed = 8, batch = 64, epochs = 50, patience = 5, threads = 1;
  double gamma = 0.0, lr = 1e-3, clip = 5.0, smoothing = 0.01;
  std::uint64_t seed = 1;
  std::size_t hawkes_iterations = 3000;
};

struct EvalOptions {
  std::vector<std::string> models;
  std::string data, split = "test", mode = "both", theta_grid = "memetracker", report, truth, expectation = "normalized";
  std::string show_theta = "1,10";
  std::string manifest;
};

struct PlotOptions {
  std::vector<std::string> reports;
  std::string out;
};

struct PredictOptions {
  std::string model, history, expectation = "normalized", manifest;
  std::size_t top = 3;
};

struct GradcheckOptions {
  std::string shaping = "exp", manifest;
  std::size_t trials = 20, hidden = 8, marks = 5, embed = 4, length = 10;
  std::uint64_t seed = 7;
  double tolerance = 1e-5;
};

struct ReplayOptions {
  std::string manifest, workdir;
};

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

namespace detail {

inline RunManifest start_manifest(const std::string& command, const std::vector<std::string>& args,
                                  const CLI::App& sub, std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.argv = args;
  m.config = options_json(sub);
  m.seed = seed;
  return m;
}

inline void finish_manifest(RunManifest& m, const std::chrono::steady_clock::time_point& started,
                            const std::string& path) {
  m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  m.artifacts["manifest"] = path;
  m.save(path);
}

// ---------------------------------------------------------------------------

inline int do_ingest(const IngestOptions& o, RunManifest& man, std::ostream& out, std::ostream& err) {
  IngestConfig cfg;
  if (o.preset == "memetracker") cfg = IngestConfig::memetracker();
  else if (o.preset == "dianping") cfg = IngestConfig::dianping();
  else if (!o.preset.empty()) throw DataError("unknown preset '" + o.preset + "' (memetracker|dianping)");
  if (o.gap_hours) cfg.gap_hours = *o.gap_hours;
  if (o.min_length) cfg.min_length = *o.min_length;
  if (o.top_k) cfg.top_k = *o.top_k;
  if (o.max_length) cfg.max_length = *o.max_length;
  const auto corpus = ingest(o.input, cfg, &err);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_vocabulary(dir, corpus.vocabulary);
  write_sequences(dir / "corpus.tsv", corpus.sequences, corpus.vocabulary);
  const auto& st = corpus.stats;
  write_json(dir / "meta.json", {{"epoch_unix_seconds", o.epoch_unix},
                                 {"raw_streams", st.raw_streams},
                                 {"raw_events", st.raw_events},
                                 {"dropped_rare_mark", st.dropped_rare_mark},
                                 {"dropped_short", st.dropped_short},
                                 {"perturbed", st.perturbed},
                                 {"sequences", corpus.sequences.size()},
                                 {"marks", corpus.vocabulary.size()}});
  man.add_input(o.input);
  man.artifacts["corpus"] = (dir / "corpus.tsv").string();
  man.artifacts["vocabulary"] = (dir / "vocab.txt").string();
  out << "ingested " << corpus.sequences.size() << " sequences, " << corpus.vocabulary.size() << " marks ("
      << st.raw_events << " raw events; dropped " << st.dropped_rare_mark << " rare-mark, " << st.dropped_short
      << " short-piece; perturbed " << st.perturbed << ")\n";
  return kSuccess;
}

inline int do_split(const SplitOptions& o, RunManifest& man, std::ostream& out) {
  const fs::path dir(o.data);
  const auto vocab = load_vocabulary(dir);
  const auto corpus = load_sequences(dir / "corpus.tsv", vocab);
  const auto s = split(corpus, o.seed);
  write_splits(dir, s, vocab);
  man.add_input(dir / "corpus.tsv");
  man.artifacts["train"] = (dir / "train.tsv").string();
  man.artifacts["validation"] = (dir / "validation.tsv").string();
  man.artifacts["test"] = (dir / "test.tsv").string();
  out << "split " << corpus.size() << " sequences: train " << s.train.size() << ", validation "
      << s.validation.size() << ", test " << s.test.size() << '\n';
  return kSuccess;
}

inline int do_simulate(const SimulateOptions& o, RunManifest& man, std::ostream& out) {
  std::ifstream in(o.spec);
  if (!in) throw DataError("cannot open spec file '" + o.spec + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(o.spec + ": " + e.what());
  }
  if (o.seed) j["seed"] = *o.seed;
  const auto spec = parse_generator_spec(j);
  const auto gen = generate_corpus(spec, o.n);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_vocabulary(dir, gen.vocabulary);
  write_sequences(dir / "corpus.tsv", gen.sequences, gen.vocabulary);
  write_json(dir / "truth.json", ground_truth_json(spec, gen));
  write_json(dir / "meta.json", {{"epoch_unix_seconds", 0}, {"generator", to_string(spec.kind)}});
  write_splits(dir, split(gen.sequences, spec.seed), gen.vocabulary);
  man.seed = spec.seed;
  man.add_input(o.spec);
  man.artifacts["corpus"] = (dir / "corpus.tsv").string();
  man.artifacts["truth"] = (dir / "truth.json").string();
  std::ifstream check(dir / "corpus.tsv");
  man.results["corpus_digest"] = file_digest(dir / "corpus.tsv");
  out << "simulated " << gen.sequences.size() << " " << to_string(spec.kind) << " sequences ("
      << count_transitions(gen.sequences) << " transitions, " << gen.resamples << " resampled)\n";
  return kSuccess;
}

inline int do_train(const TrainOptions& o, RunManifest& man, std::ostream& out, std::ostream& err) {
  const fs::path dir(o.data);
  const auto vocab = load_vocabulary(dir);
  const auto train_set = load_sequences(dir / "train.tsv", vocab);
  const auto validation = load_sequences(dir / "validation.tsv", vocab);
  man.add_input(dir / "vocab.txt");
  man.add_input(dir / "train.tsv");
  man.add_input(dir / "validation.tsv");
  const std::size_t k = vocab.size();
  const std::string report_path = o.report.empty() ? o.out + ".report.jsonl" : o.report;

  Checkpoint ckpt;
  double final_nll = 0.0;
  std::optional<TrainReport> report;
  if (o.model == "rnn-td" || o.model == "rmtpp") {
    const auto meta = load_meta(dir);
    if (o.calendar != "on" && o.calendar != "off") throw DataError("--calendar must be on or off");
    FeatureConfig features{o.calendar == "on", meta.value("epoch_unix_seconds", std::int64_t{0})};
    const ModelDims dims{o.hidden, k, o.embed, features};
    TrainConfig cfg;
    cfg.learning_rate = o.lr;
    cfg.batch_size = o.batch;
    cfg.max_epochs = o.epochs;
    cfg.patience = o.patience;
    cfg.gamma = o.gamma;
    cfg.seed = o.seed;
    cfg.clip_norm = o.clip;
    cfg.threads = o.threads;
    auto log = [&out](const EpochRecord& r) {
      out << "epoch " << r.epoch << "  train " << fmt("%.6f", r.train_nll) << "  validation "
          << fmt("%.6f", r.validation_nll) << "  (" << fmt("%.1f", r.seconds) << " s)\n";
    };
    TrainResult result;
    if (o.model == "rmtpp") {
      result = rmtpp_like(train_set, validation, dims, cfg, log);
    } else {
      result = train(init_params(dims, parse_shaping(o.shaping), o.seed), train_set, validation, cfg, log);
    }
    store_model(ckpt, result.params, o.model);
    final_nll = result.report.best_validation_nll;
    report = result.report;
    out << "best epoch " << result.report.best_epoch << " of " << result.report.stopping_epoch
        << ", validation NLL " << fmt("%.6f", final_nll) << " per event\n";
  } else if (auto kind = parse_point_process(o.model)) {
    HawkesFitOptions hopt;
    hopt.iterations = o.hawkes_iterations;
    const auto m = pp_fit(train_set, *kind, k, hopt, &err);
    store_point_process(ckpt, m);
    LoadedModel lm;
    lm.point_process = m;
    final_nll = lm.mean_nll_on(validation);
    out << to_string(*kind) << " validation NLL " << fmt("%.6f", final_nll) << " per event\n";
  } else if (o.model == "mc1" || o.model == "mc2" || o.model == "mc3") {
    const auto m = mc_fit(train_set, static_cast<std::size_t>(o.model[2] - '0'), k, o.smoothing);
    store_markov(ckpt, m);
    LoadedModel lm;
    lm.markov = m;
    final_nll = lm.mean_nll_on(validation);
    out << o.model << " validation mark log-loss " << fmt("%.6f", final_nll) << " per event\n";
  } else {
    throw CLI::ValidationError("--model", "unknown model '" + o.model + "'");
  }
  ckpt.set("vocabulary", vocabulary_strings(vocab));
  ckpt.save(o.out);
  man.artifacts["checkpoint"] = o.out;
  if (report) {
    std::ofstream r(report_path, std::ios::trunc);
    if (!r) throw DataError("cannot write " + report_path);
    report->write_jsonl(r);
    man.artifacts["report"] = report_path;
  }
  man.results["final_validation_nll"] = hex_double(final_nll);
  return kSuccess;
}

inline int do_eval(const EvalOptions& o, RunManifest& man, std::ostream& out) {
  const fs::path dir(o.data);
  const auto vocab = load_vocabulary(dir);
  const auto data = load_sequences(dir / (o.split + ".tsv"), vocab);
  man.add_input(dir / (o.split + ".tsv"));
  const auto thetas = parse_theta_grid(o.theta_grid);
  std::vector<double> shown = o.show_theta.empty() ? std::vector<double>{} : parse_theta_grid(o.show_theta);
  std::vector<double> grid = thetas;
  grid.insert(grid.end(), shown.begin(), shown.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<EvalMode> modes;
  if (o.mode == "both") modes = {EvalMode::Free, EvalMode::GivenTime};
  else modes = {parse_eval_mode(o.mode)};

  std::vector<MetricsReport> reports;
  std::vector<nlohmann::json> lines;
  for (const auto& path : o.models) {
    const auto m = load_any(path, expectation_from(o.expectation));
    if (m.vocabulary != vocab) throw DataError("checkpoint " + path + ": vocabulary differs from the data");
    man.add_input(path);
    const double model_nll = m.mean_nll_on(data);
    for (auto mode : modes) {
      auto r = evaluate(*m.predictor, data, mode, grid);
      auto j = report_json(r);
      j["nll"] = model_nll;
      j["checkpoint"] = path;
      lines.push_back(j);
      man.results[path + ":" + to_string(mode) + ":mrr"] = hex_double(r.mrr);
      reports.push_back(std::move(r));
    }
    out << m.predictor->name() << ": mean NLL " << fmt("%.6f", model_nll) << " per event on " << o.split << '\n';
  }
  if (!o.truth.empty()) {
    std::ifstream in(o.truth);
    if (!in) throw DataError("cannot open " + o.truth);
    const auto truth = nlohmann::json::parse(in);
    std::map<std::string, std::pair<double, std::optional<double>>> by_id;
    for (const auto& s : truth.at("sequences"))
      by_id[s.at("id").get<std::string>()] = {
          s.at("nll").get<double>(),
          s.contains("nll_rnntd_form") ? std::optional<double>(s["nll_rnntd_form"].get<double>()) : std::nullopt};
    double total = 0.0, total_form = 0.0;
    bool has_form = true;
    std::size_t steps = 0;
    for (const auto& s : data) {
      auto it = by_id.find(s.id);
      if (it == by_id.end()) throw DataError("truth file has no record for sequence '" + s.id + "'");
      total += it->second.first;
      if (it->second.second) total_form += *it->second.second;
      else has_form = false;
      steps += s.size() - 1;
    }
    out << "ground truth: mean NLL " << fmt("%.6f", total / static_cast<double>(steps)) << " per event";
    if (has_form) out << ", mark-then-time form " << fmt("%.6f", total_form / static_cast<double>(steps));
    out << '\n';
  }
  write_table(out, reports, shown);
  if (!o.report.empty()) {
    std::ofstream r(o.report, std::ios::trunc);
    if (!r) throw DataError("cannot write " + o.report);
    for (const auto& j : lines) r << j.dump() << '\n';
    man.artifacts["report"] = o.report;
  }
  return kSuccess;
}

inline int do_plot(const PlotOptions& o, std::ostream& out) {
  std::vector<MetricsReport> reports;
  for (const auto& path : o.reports) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report " + path);
    std::string line;
    while (std::getline(in, line))
      if (!trim(line).empty()) reports.push_back(report_from_json(nlohmann::json::parse(line)));
  }
  std::ofstream svg(o.out, std::ios::trunc);
  if (!svg) throw DataError("cannot write " + o.out);
  write_acc_theta_svg(svg, reports);
  out << "wrote " << o.out << '\n';
  return kSuccess;
}

inline int do_predict(const PredictOptions& o, std::ostream& out) {
  const auto m = load_any(o.model, expectation_from(o.expectation));
  std::ifstream in(o.history);
  if (!in) throw DataError("cannot open history file '" + o.history + "'");
  const auto seqs = read_corpus(in, m.vocabulary);
  if (seqs.empty() || seqs.front().events.empty()) throw DataError("history file holds no events");
  const auto& history = seqs.front();
  if (o.top == 0 || o.top > m.predictor->marks())
    throw DataError("--top must be between 1 and the number of marks (" + std::to_string(m.predictor->marks()) + ")");
  auto w = m.predictor->walker();
  for (const auto& e : history.events) w->observe(e);
  const Vector scores = w->mark_scores();
  std::vector<PredictionCandidate> cands;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    const auto t = w->predict_time(e);
    cands.push_back({e, t ? *t : std::numeric_limits<double>::quiet_NaN(), scores[e]});
  }
  rank_candidates(cands);
  const double t_last = history.events.back().time;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-5s %-24s %-14s %s\n", "rank", "mark", "time", "likelihood");
  out << buf;
  for (std::size_t i = 0; i < o.top; ++i) {
    const auto& c = cands[i];
    const std::string time = std::isnan(c.expected_time) ? "-" : fmt("%.6g", c.expected_time - t_last);
    std::snprintf(buf, sizeof buf, "%-5zu %-24s %-14s %.6g\n", i + 1, m.vocabulary.decode(c.mark).c_str(),
                  time.c_str(), c.likelihood);
    out << buf;
  }
  return kSuccess;
}

inline int do_gradcheck(const GradcheckOptions& o, RunManifest& man, std::ostream& out) {
  GradCheckConfig cfg;
  cfg.dims = {o.hidden, o.marks, o.embed, FeatureConfig{true, 0}};
  cfg.length = o.length;
  const auto shaping = parse_shaping(o.shaping);
  double worst = 0.0;
  std::string worst_block;
  for (std::size_t t = 0; t < o.trials; ++t) {
    auto [p, seq] = random_configuration(cfg, shaping, o.seed, t);
    const double gamma = t % 2 ? 0.1 : 0.0;
    const auto r = check_gradients(std::move(p), seq, gamma);
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_block = r.worst_block;
    }
  }
  man.results["max_relative_error"] = hex_double(worst);
  out << "gradcheck " << to_string(shaping) << ": " << o.trials << " trials, max relative error "
      << fmt("%.3e", worst) << (worst_block.empty() ? "" : " (" + worst_block + ")") << '\n';
  return worst < o.tolerance ? kSuccess : kNumericalError;
}

/// Re-runs a recorded command with its outputs redirected into `workdir` and
/// compares every recorded numeric result bit for bit.
inline int do_replay(const ReplayOptions& o, std::ostream& out, std::ostream& err) {
  const auto recorded = RunManifest::load(o.manifest);
  for (const auto& [path, digest] : recorded.inputs) {
    if (!fs::exists(path)) throw DataError("replay: input " + path + " is missing");
    if (file_digest(path) != digest) throw DataError("replay: input " + path + " changed since the recorded run");
  }
  const fs::path work = o.workdir.empty() ? fs::path(o.manifest).parent_path() / "replay" : fs::path(o.workdir);
  fs::create_directories(work);
  std::vector<std::string> args = recorded.argv;
  const fs::path new_manifest = work / "replay.manifest.json";
  bool has_manifest = false;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--out" || args[i] == "--report") {
      args[i + 1] = (work / fs::path(args[i + 1]).filename()).string();
    } else if (args[i] == "--manifest") {
      args[i + 1] = new_manifest.string();
      has_manifest = true;
    }
  }
  if (!has_manifest) {
    args.push_back("--manifest");
    args.push_back(new_manifest.string());
  }
  std::ostringstream child_out;
  const int code = run(args, child_out, err);
  if (code != kSuccess) {
    out << child_out.str();
    return code;
  }
  const auto replayed = RunManifest::load(new_manifest);
  bool identical = true;
  for (const auto& [key, value] : recorded.results) {
    auto it = replayed.results.find(key);
    const std::string now = it == replayed.results.end() ? "<missing>" : it->second;
    const bool same = now == value;
    identical &= same;
    out << key << ": recorded " << value << ", replayed " << now << (same ? "  identical" : "  DIFFERENT") << '\n';
  }
  out << (identical ? "replay reproduced all recorded results\n" : "replay differs from the recorded run\n");
  return identical ? kSuccess : kNumericalError;
}

}  // namespace detail

/// Runs one subcommand. `args` excludes the program name.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Recurrent marked temporal point process toolkit", "rnntd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kLibraryVersion);

  IngestOptions ingest_o;
  auto* ingest_c = app.add_subcommand("ingest", "Preprocess raw event logs into a corpus directory");
  ingest_c->add_option("--input", ingest_o.input, "Raw records: id<TAB>time:mark...")->required()->check(CLI::ExistingFile);
  ingest_c->add_option("--out", ingest_o.out, "Output corpus directory")->required();
  ingest_c->add_option("--preset", ingest_o.preset, "memetracker | dianping");
  ingest_c->add_option("--gap-hours", ingest_o.gap_hours, "Split streams at gaps above this many hours");
  ingest_c->add_option("--min-length", ingest_o.min_length, "Drop pieces with fewer events");
  ingest_c->add_option("--top-k", ingest_o.top_k, "Keep the most frequent marks");
  ingest_c->add_option("--max-length", ingest_o.max_length, "Chunk longer pieces");
  ingest_c->add_option("--epoch-unix", ingest_o.epoch_unix, "Unix time of hour 0, for calendar features");
  ingest_c->add_option("--manifest", ingest_o.manifest, "Run manifest path");

  SplitOptions split_o;
  auto* split_c = app.add_subcommand("split", "Seeded 80/10/10 split of a corpus directory");
  split_c->add_option("--data", split_o.data, "Corpus directory")->required();
  split_c->add_option("--seed", split_o.seed, "Random seed");
  split_c->add_option("--manifest", split_o.manifest, "Run manifest path");

  SimulateOptions sim_o;
  auto* sim_c = app.add_subcommand("simulate", "Generate a synthetic corpus from a generator spec");
  sim_c->add_option("--spec", sim_o.spec, "Generator spec (JSON)")->required();
  sim_c->add_option("--n", sim_o.n, "Number of sequences");
  sim_c->add_option("--seed", sim_o.seed, "Random seed (overrides the spec)");
  sim_c->add_option("--out", sim_o.out, "Output corpus directory")->required();
  sim_c->add_option("--manifest", sim_o.manifest, "Run manifest path");

  TrainOptions train_o;
  auto* train_c = app.add_subcommand("train", "Fit a model on a split corpus directory");
  train_c->add_option("--data", train_o.data, "Corpus directory with train/validation splits")->required();
  train_c->add_option("--model", train_o.model,
                      "rnn-td | rmtpp | mc1 | mc2 | mc3 | pp-poisson | pp-hawkes | mspp-poisson | mspp-hawkes");
  train_c->add_option("--shaping", train_o.shaping, "const | exp (rnn-td)");
  train_c->add_option("--hidden", train_o.hidden, "Hidden units");
  train_c->add_option("--embed", train_o.embed, "Mark embedding size");
  train_c->add_option("--gamma", train_o.gamma, "Lasso weight on the rates");
  train_c->add_option("--lr", train_o.lr, "Adam learning rate");
  train_c->add_option("--batch", train_o.batch, "Sequences per batch");
  train_c->add_option("--epochs", train_o.epochs, "Maximum epochs");
  train_c->add_option("--patience", train_o.patience, "Epochs without improvement before stopping");
  train_c->add_option("--clip", train_o.clip, "Global gradient-norm clip (0 disables)");
  train_c->add_option("--calendar", train_o.calendar, "on | off: calendar time features");
  train_c->add_option("--smoothing", train_o.smoothing, "Additive smoothing (markov models)");
  train_c->add_option("--hawkes-iterations", train_o.hawkes_iterations, "Optimizer iterations (hawkes models)");
  train_c->add_option("--seed", train_o.seed, "Random seed");
  train_c->add_option("--threads", train_o.threads, "Worker threads (results do not depend on it)");
  train_c->add_option("--out", train_o.out, "Checkpoint path")->required();
  train_c->add_option("--report", train_o.report, "Per-epoch report (JSON lines)");
  train_c->add_option("--manifest", train_o.manifest, "Run manifest path");

  EvalOptions eval_o;
  auto* eval_c = app.add_subcommand("eval", "Score checkpoints on a split");
  eval_c->add_option("--model", eval_o.models, "Checkpoint(s)")->required();
  eval_c->add_option("--data", eval_o.data, "Corpus directory")->required();
  eval_c->add_option("--split", eval_o.split, "train | validation | test");
  eval_c->add_option("--mode", eval_o.mode, "free | given-time | both");
  eval_c->add_option("--theta-grid", eval_o.theta_grid, "memetracker | dianping | log:LO:HI:N | v1,v2,...");
  eval_c->add_option("--show-theta", eval_o.show_theta, "Thetas shown in the table");
  eval_c->add_option("--expectation", eval_o.expectation, "normalized | raw");
  eval_c->add_option("--truth", eval_o.truth, "Generator truth.json to report its NLL");
  eval_c->add_option("--report", eval_o.report, "Metrics (JSON lines)");
  eval_c->add_option("--manifest", eval_o.manifest, "Run manifest path");

  PlotOptions plot_o;
  auto* plot_c = app.add_subcommand("plot", "Acc@theta curves from eval reports as SVG");
  plot_c->add_option("--report", plot_o.reports, "Eval report(s)")->required();
  plot_c->add_option("--out", plot_o.out, "SVG path")->required();

  PredictOptions predict_o;
  auto* predict_c = app.add_subcommand("predict", "Rank next-event candidates after a history");
  predict_c->add_option("--model", predict_o.model, "Checkpoint")->required();
  predict_c->add_option("--history", predict_o.history, "One record: id<TAB>time:mark...")->required();
  predict_c->add_option("--top", predict_o.top, "Candidates to list");
  predict_c->add_option("--expectation", predict_o.expectation, "normalized | raw");
  predict_c->add_option("--manifest", predict_o.manifest, "Run manifest path");

  GradcheckOptions grad_o;
  auto* grad_c = app.add_subcommand("gradcheck", "Compare BPTT gradients with finite differences");
  grad_c->add_option("--shaping", grad_o.shaping, "const | exp");
  grad_c->add_option("--trials", grad_o.trials, "Random configurations");
  grad_c->add_option("--seed", grad_o.seed, "Random seed");
  grad_c->add_option("--hidden", grad_o.hidden, "Hidden units");
  grad_c->add_option("--marks", grad_o.marks, "Marks");
  grad_c->add_option("--embed", grad_o.embed, "Embedding size");
  grad_c->add_option("--length", grad_o.length, "Sequence length");
  grad_c->add_option("--tolerance", grad_o.tolerance, "Pass threshold on the max relative error");
  grad_c->add_option("--manifest", grad_o.manifest, "Run manifest path");

  ReplayOptions replay_o;
  auto* replay_c = app.add_subcommand("replay", "Re-run a recorded command and compare its results");
  replay_c->add_option("--manifest", replay_o.manifest, "Recorded manifest")->required()->check(CLI::ExistingFile);
  replay_c->add_option("--workdir", replay_o.workdir, "Directory for the replayed outputs");

  const auto started = std::chrono::steady_clock::now();
  try {
    args = detail::expand_config(std::move(args));
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }

  auto manifest_for = [&](const CLI::App* sub, const std::string& name, std::uint64_t seed) {
    return detail::start_manifest(name, args, *sub, seed);
  };
  try {
    if (*ingest_c) {
      auto man = manifest_for(ingest_c, "ingest", 0);
      const int code = detail::do_ingest(ingest_o, man, out, err);
      detail::finish_manifest(man, started, ingest_o.manifest.empty() ? (fs::path(ingest_o.out) / "ingest.manifest.json").string() : ingest_o.manifest);
      return code;
    }
    if (*split_c) {
      auto man = manifest_for(split_c, "split", split_o.seed);
      const int code = detail::do_split(split_o, man, out);
      detail::finish_manifest(man, started, split_o.manifest.empty() ? (fs::path(split_o.data) / "split.manifest.json").string() : split_o.manifest);
      return code;
    }
    if (*sim_c) {
      auto man = manifest_for(sim_c, "simulate", sim_o.seed.value_or(0));
      const int code = detail::do_simulate(sim_o, man, out);
      detail::finish_manifest(man, started, sim_o.manifest.empty() ? (fs::path(sim_o.out) / "simulate.manifest.json").string() : sim_o.manifest);
      return code;
    }
    if (*train_c) {
      auto man = manifest_for(train_c, "train", train_o.seed);
      const int code = detail::do_train(train_o, man, out, err);
      detail::finish_manifest(man, started, train_o.manifest.empty() ? train_o.out + ".manifest.json" : train_o.manifest);
      return code;
    }
    if (*eval_c) {
      auto man = manifest_for(eval_c, "eval", 0);
      const int code = detail::do_eval(eval_o, man, out);
      std::string path = eval_o.manifest;
      if (path.empty() && !eval_o.report.empty()) path = eval_o.report + ".manifest.json";
      if (!path.empty()) detail::finish_manifest(man, started, path);
      return code;
    }
    if (*plot_c) return detail::do_plot(plot_o, out);
    if (*predict_c) {
      auto man = manifest_for(predict_c, "predict", 0);
      const int code = detail::do_predict(predict_o, out);
      if (!predict_o.manifest.empty()) detail::finish_manifest(man, started, predict_o.manifest);
      return code;
    }
    if (*grad_c) {
      auto man = manifest_for(grad_c, "gradcheck", grad_o.seed);
      const int code = detail::do_gradcheck(grad_o, man, out);
      if (!grad_o.manifest.empty()) detail::finish_manifest(man, started, grad_o.manifest);
      return code;
    }
    if (*replay_c) return detail::do_replay(replay_o, out, err);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const DimensionError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args), std::cout, std::cerr);
}

}  // namespace rnntd::cli
