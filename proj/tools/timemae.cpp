// Command-line driver: pre-training, fine-tuning, evaluation, embedding
// export, synthetic data generation and checkpoint inspection.

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "timemae/checkpoint.hpp"
#include "timemae/config.hpp"
#include "timemae/dataset.hpp"
#include "timemae/errors.hpp"
#include "timemae/finetune.hpp"
#include "timemae/pretrain.hpp"

namespace fs = std::filesystem;
using namespace timemae;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kDivergence = 4 };

// TIMEMAE_LOG: 0/quiet, 1/info (default), 2/debug.
int log_level() {
  static const int level = [] {
    const char* v = std::getenv("TIMEMAE_LOG");
    if (!v) return 1;
    std::string s(v);
    if (s == "0" || s == "quiet" || s == "off") return 0;
    if (s == "2" || s == "debug") return 2;
    return 1;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[timemae] " << msg << '\n';
}

void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::cerr << "[timemae:debug] " << msg << '\n';
}

/// Writes metric records to stdout and, when configured, to a metrics file.
class MetricSink {
 public:
  explicit MetricSink(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::app);
      if (!file_) throw ConfigError("cannot open metrics file " + path);
    }
  }
  void emit(const std::string& line) {
    std::cout << line << '\n';
    if (file_.is_open()) file_ << line << '\n';
  }
  void flush() {
    std::cout.flush();
    if (file_.is_open()) file_.flush();
  }

 private:
  std::ofstream file_;
};

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string data;
  std::string test;
  std::string ckpt;
  std::string out;
  std::string mode;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

/// Config file first, then --set overrides, then the dedicated flags.
RunConfig build_config(const CommonArgs& a, RunConfig base = {}) {
  RunConfig rc = std::move(base);
  if (!a.config.empty()) rc.apply_text([&] {
    std::ifstream is(a.config);
    if (!is) throw ConfigError("cannot open config file " + a.config);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }());
  for (const auto& s : a.sets) rc.apply_override(s);
  if (!a.data.empty()) rc.data = a.data;
  if (!a.test.empty()) rc.test = a.test;
  if (!a.ckpt.empty()) rc.ckpt = a.ckpt;
  if (!a.out.empty()) rc.out = a.out;
  if (!a.mode.empty()) rc.set("mode", a.mode);
  if (a.seed) rc.pretrain.seed = *a.seed;
  if (a.deterministic) rc.deterministic = true;
  return rc;
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw CLI::ValidationError(flag, "is required for this command");
}

TimeSeriesBatch load_data(const std::string& path, NormalizeMode mode) {
  TimeSeriesBatch b = load_dataset(path);
  b.validate();
  return normalize(b, mode);
}

/// Loads the model for downstream use: from a checkpoint, or freshly
/// initialized when ckpt is "random".
DownstreamModel load_downstream(RunConfig& rc, const TimeSeriesBatch& data) {
  std::size_t classes = data.n_classes;
  if (rc.ckpt == "random") {
    PretrainConfig cfg = rc.pretrain;
    std::size_t s_max = cfg.max_positions ? cfg.max_positions : SliceConfig{cfg.sigma, cfg.d_model}.num_slices(data.length);
    log_info("random initialization (no pre-training)");
    return DownstreamModel::from_state(ModelState::init(cfg, data.channels, s_max), classes);
  }
  Checkpoint ckpt = read_checkpoint(rc.ckpt);
  DownstreamModel m = model_from_checkpoint(ckpt, classes);
  return m;
}

/// Run settings for a checkpoint-backed command: the checkpoint's config echo
/// is the base, the command line is layered on top.
RunConfig config_for_checkpoint(const CommonArgs& a) {
  RunConfig base;
  if (!a.ckpt.empty() && a.ckpt != "random") {
    base = read_checkpoint(a.ckpt).config();
    base.data.clear();
    base.test.clear();
    base.out.clear();
  }
  return build_config(a, base);
}

int cmd_pretrain(const CommonArgs& a) {
  RunConfig rc = build_config(a);
  require(rc.data, "--data");
  require(rc.out, "--out");
  rc.pretrain.validate();
  TimeSeriesBatch data = load_data(rc.data, rc.normalize);
  if (data.n_examples == 0) throw DataError("training set is empty");
  PretrainConfig cfg = rc.pretrain;
  std::size_t s = SliceConfig{cfg.sigma, cfg.d_model}.num_slices(data.length);
  std::size_t s_max = cfg.max_positions ? cfg.max_positions : s;
  if (s_max < s) throw ConfigError("max_positions=" + std::to_string(s_max) + " is below S=" + std::to_string(s));
  log_info("pre-training on " + std::to_string(data.n_examples) + " examples, T=" + std::to_string(data.length) +
           ", m=" + std::to_string(data.channels) + ", S=" + std::to_string(s));
  log_debug("config:\n" + rc.to_text());

  PretrainSession session(ModelState::init(cfg, data.channels, s_max));
  MetricSink sink(rc.metrics_file);
  PretrainHooks hooks;
  hooks.on_step = [&](const LossReport& r) { sink.emit(r.to_json()); };
  EpochSummary last;
  hooks.on_epoch = [&](const EpochSummary& e) {
    sink.emit(e.to_json());
    last = e;
    log_debug("epoch " + std::to_string(e.epoch) + " l_total " + std::to_string(e.l_total));
  };
  try {
    pretrain_loop(data, session, hooks);
  } catch (const DivergenceError& e) {
    // The failing step threw before touching parameters, so the state is the last good one.
    save_state(session.state(), rc, rc.out);
    sink.flush();
    std::cerr << "divergence: " << e.what() << "; last finite state saved to " << rc.out << '\n';
    return kDivergence;
  }
  save_state(session.state(), rc, rc.out);
  nlohmann::json summary = {{"type", "pretrain_summary"}, {"epochs", cfg.epochs},
                            {"steps", session.global_step()}, {"l_cls", last.l_cls},
                            {"l_align", last.l_align},       {"l_total", last.l_total},
                            {"perplexity", last.perplexity},  {"checkpoint", rc.out}};
  sink.emit(summary.dump());
  return kOk;
}

int cmd_finetune(const CommonArgs& a) {
  RunConfig rc = config_for_checkpoint(a);
  require(rc.ckpt, "--ckpt");
  require(rc.data, "--data");
  TimeSeriesBatch train = load_data(rc.data, rc.normalize);
  std::optional<TimeSeriesBatch> test;
  if (!rc.test.empty()) test = load_data(rc.test, rc.normalize);
  DownstreamModel model = load_downstream(rc, train);
  FinetuneConfig fc = rc.finetune_config();
  log_info("fine-tuning (" + to_string(fc.mode) + ") for " + std::to_string(fc.epochs) + " epochs");

  MetricSink sink(rc.metrics_file);
  FinetuneResult result = finetune(std::move(model), train, test ? &*test : nullptr, fc,
                                   [&](const FinetuneEpoch& e) { sink.emit(e.to_json()); });
  if (!rc.out.empty()) save_model(result.model, rc, rc.out);
  sink.emit(result.report.to_json());
  return kOk;
}

int cmd_eval(const CommonArgs& a) {
  RunConfig rc = config_for_checkpoint(a);
  require(rc.ckpt, "--ckpt");
  require(rc.data, "--data");
  TimeSeriesBatch data = load_data(rc.data, rc.normalize);
  if (rc.ckpt != "random" && !read_checkpoint(rc.ckpt).has_head()) {
    throw CompatibilityError("eval needs a fine-tuned checkpoint (no classifier head in " + rc.ckpt + ")");
  }
  DownstreamModel model = load_downstream(rc, data);
  MetricSink sink(rc.metrics_file);
  sink.emit(evaluate(model, data, parse_finetune_mode(rc.mode), rc.pool_include_padding).to_json());
  return kOk;
}

int cmd_export(const CommonArgs& a) {
  RunConfig rc = config_for_checkpoint(a);
  require(rc.ckpt, "--ckpt");
  require(rc.data, "--data");
  require(rc.out, "--out");
  TimeSeriesBatch data = load_data(rc.data, rc.normalize);
  DownstreamModel model = load_downstream(rc, data);
  std::vector<Real> pooled = pooled_embeddings(model, data, rc.pool_include_padding);
  const std::size_t d = model.featurizer.d_model();
  std::ofstream os(rc.out, std::ios::trunc);
  if (!os) throw FormatError("cannot open " + rc.out + " for writing");
  char buf[32];
  for (std::size_t i = 0; i < data.n_examples; ++i) {
    if (data.labels) {
      os << (*data.labels)[i];
    } else {
      os << -1;
    }
    for (std::size_t k = 0; k < d; ++k) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(pooled[i * d + k]));
      os << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
    }
    os << '\n';
  }
  log_info("wrote " + std::to_string(data.n_examples) + " embeddings of width " + std::to_string(d) + " to " + rc.out);
  return kOk;
}

struct SyntheticArgs {
  std::size_t n_per_class = 75;
  std::size_t classes = 3;
  std::size_t length = 64;
  std::size_t channels = 2;
  double test_fraction = 1.0 / 3.0;
  std::uint64_t seed = 7;
  std::string out;
};

int cmd_gen_synthetic(const SyntheticArgs& a) {
  require(a.out, "--out");
  TimeSeriesBatch all = make_synthetic(a.n_per_class, a.classes, a.length, a.channels, a.seed);
  SplitResult split = stratified_split(all, a.test_fraction, a.seed);
  fs::create_directories(a.out);
  write_binary(split.train, fs::path(a.out) / "train.tsb");
  write_binary(split.test, fs::path(a.out) / "test.tsb");
  nlohmann::json j = {{"type", "synthetic"},
                      {"train", (fs::path(a.out) / "train.tsb").string()},
                      {"test", (fs::path(a.out) / "test.tsb").string()},
                      {"n_train", split.train.n_examples},
                      {"n_test", split.test.n_examples}};
  std::cout << j.dump() << '\n';
  return kOk;
}

int cmd_inspect(const std::string& path) {
  Checkpoint c = read_checkpoint(path);
  std::cout << "version " << c.version << '\n' << "tensors " << c.tensors.size() << '\n';
  std::size_t total = 0;
  for (const auto& t : c.tensors) {
    double sq = 0;
    for (float v : t.values) sq += static_cast<double>(v) * v;
    Shape shape(t.dims.begin(), t.dims.end());
    std::cout << "  " << t.name << ' ' << shape_str(shape) << " l2=" << std::sqrt(sq) << '\n';
    total += t.values.size();
  }
  std::cout << "parameters " << total << '\n' << "config:\n" << c.config_text;
  return kOk;
}

void add_common(CLI::App* cmd, CommonArgs& a, bool with_mode) {
  cmd->add_option("--config", a.config, "key = value config file");
  cmd->add_option("--set", a.sets, "override one config key (key=value), repeatable")->allow_extra_args(false);
  cmd->add_option("--data", a.data, "dataset (TSB1 binary or CSV)");
  cmd->add_option("--test", a.test, "held-out dataset");
  cmd->add_option("--ckpt", a.ckpt, "checkpoint path, or 'random'");
  cmd->add_option("--out", a.out, "output path");
  if (with_mode) cmd->add_option("--mode", a.mode, "fine-tuning protocol: last | all");
  cmd->add_option("--seed", a.seed, "run seed");
  cmd->add_flag("--deterministic", a.deterministic, "bit-reproducible execution (the default)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked time-series representation learning: pre-train, fine-tune, evaluate."};
  app.require_subcommand(1);
  app.footer("Config keys:\n" + RunConfig::describe_keys());

  CommonArgs common;
  SyntheticArgs synth;
  std::string inspect_path;
  auto* pretrain = app.add_subcommand("pretrain", "run self-supervised pre-training and write a checkpoint");
  add_common(pretrain, common, false);
  auto* fine = app.add_subcommand("finetune", "train a classifier on top of a checkpoint and report metrics");
  add_common(fine, common, true);
  auto* eval = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
  add_common(eval, common, true);
  auto* exp = app.add_subcommand("export-embeddings", "write pooled representations as CSV");
  add_common(exp, common, false);
  auto* gen = app.add_subcommand("gen-synthetic", "write synthetic train/test TSB1 files");
  gen->add_option("--out", synth.out, "output directory")->required();
  gen->add_option("--n-per-class", synth.n_per_class, "examples per class before the split");
  gen->add_option("--classes", synth.classes, "number of classes");
  gen->add_option("--length", synth.length, "series length T");
  gen->add_option("--channels", synth.channels, "channels m");
  gen->add_option("--test-fraction", synth.test_fraction, "held-out share per class");
  gen->add_option("--seed", synth.seed, "generator seed");
  auto* inspect = app.add_subcommand("inspect-ckpt", "list checkpoint tensors and the config echo");
  inspect->add_option("--ckpt", inspect_path, "checkpoint path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*pretrain) return cmd_pretrain(common);
    if (*fine) return cmd_finetune(common);
    if (*eval) return cmd_eval(common);
    if (*exp) return cmd_export(common);
    if (*gen) return cmd_gen_synthetic(synth);
    if (*inspect) return cmd_inspect(inspect_path);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kData;
  } catch (const CorruptionError& e) {
    std::cerr << "corrupt input: " << e.what() << '\n';
    return kData;
  } catch (const CompatibilityError& e) {
    std::cerr << "incompatible: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
