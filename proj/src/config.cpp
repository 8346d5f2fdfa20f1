#include "timemae/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "timemae/errors.hpp"

TIMEMAE_BEGIN_NAMESPACE

std::string to_string(TargetInput v) { return v == TargetInput::FullSequence ? "full" : "masked"; }

std::string to_string(FinetuneMode v) { return v == FinetuneMode::FineLast ? "last" : "all"; }

FinetuneMode parse_finetune_mode(const std::string& text) {
  if (text == "last" || text == "FineLast") return FinetuneMode::FineLast;
  if (text == "all" || text == "FineAll") return FinetuneMode::FineAll;
  throw ConfigError("mode must be 'last' or 'all', got '" + text + "'");
}

EncoderConfig PretrainConfig::visible_config() const {
  return {d_model, heads, visible_depth, ff_width(), static_cast<Real>(dropout)};
}

EncoderConfig PretrainConfig::decoupled_config() const {
  return {d_model, heads, decoupled_depth, ff_width(), static_cast<Real>(dropout)};
}

void PretrainConfig::validate() const {
  if (sigma == 0) throw ConfigError("sigma must be >= 1");
  if (!(mask_ratio > 0 && mask_ratio < 1)) throw ConfigError("mask_ratio must lie in (0, 1)");
  if (codebook_size < 2) throw ConfigError("codebook_size must be >= 2");
  if (!(tau > 0)) throw ConfigError("tau must be positive");
  if (tau_final < 0) throw ConfigError("tau_final must be >= 0");
  if (!(eta >= 0 && eta <= 1)) throw ConfigError("eta must lie in [0, 1]");
  if (alpha < 0 || beta < 0) throw ConfigError("alpha and beta must be >= 0");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (grad_clip < 0) throw ConfigError("grad_clip must be >= 0");
  visible_config().validate();
  decoupled_config().validate();
}

FinetuneConfig RunConfig::finetune_config() const {
  FinetuneConfig f;
  f.mode = parse_finetune_mode(mode);
  f.epochs = finetune_epochs;
  f.lr = finetune_lr > 0 ? finetune_lr : pretrain.lr;
  f.batch_size = pretrain.batch_size;
  f.seed = pretrain.seed;
  f.pool_include_padding = pool_include_padding;
  return f;
}

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  T out{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("invalid value '" + text + "' for key '" + key + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("invalid boolean '" + text + "' for key '" + key + "'");
}

std::string fmt_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct KeySpec {
  std::string name;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
KeySpec number_key(std::string name, std::string doc, T PretrainConfig::*field) {
  auto n = name;
  return {std::move(name), std::move(doc),
          [field, n](RunConfig& c, const std::string& v) { c.pretrain.*field = parse_value<T>(n, v); },
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt_double(c.pretrain.*field);
            } else {
              return std::to_string(c.pretrain.*field);
            }
          }};
}

template <class T>
KeySpec run_number_key(std::string name, std::string doc, T RunConfig::*field) {
  auto n = name;
  return {std::move(name), std::move(doc),
          [field, n](RunConfig& c, const std::string& v) { c.*field = parse_value<T>(n, v); },
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt_double(c.*field);
            } else {
              return std::to_string(c.*field);
            }
          }};
}

KeySpec string_key(std::string name, std::string doc, std::string RunConfig::*field) {
  return {std::move(name), std::move(doc), [field](RunConfig& c, const std::string& v) { c.*field = v; },
          [field](const RunConfig& c) { return c.*field; }};
}

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = [] {
    std::vector<KeySpec> s;
    s.push_back(number_key("sigma", "slice window size (time steps); default 8", &PretrainConfig::sigma));
    s.push_back(number_key("mask_ratio", "fraction of slices masked; default 0.6", &PretrainConfig::mask_ratio));
    s.push_back(number_key("d_model", "embedding width; default 64", &PretrainConfig::d_model));
    s.push_back(number_key("heads", "attention heads; default 4", &PretrainConfig::heads));
    s.push_back(number_key("visible_depth", "visible encoder layers; default 8", &PretrainConfig::visible_depth));
    s.push_back(number_key("decoupled_depth", "decoupled encoder layers; default 6",
                           &PretrainConfig::decoupled_depth));
    s.push_back(number_key("ff_dim", "feed-forward width, 0 = 4*d_model; default 0", &PretrainConfig::ff_dim));
    s.push_back(number_key("codebook_size", "codebook vocabulary K; default 64", &PretrainConfig::codebook_size));
    s.push_back(number_key("tau", "codeword softmax temperature; default 1", &PretrainConfig::tau));
    s.push_back(number_key("tau_final", "anneal tau linearly to this value, 0 = off; default 0",
                           &PretrainConfig::tau_final));
    s.push_back(number_key("eta", "target encoder momentum; default 0.99", &PretrainConfig::eta));
    s.push_back(number_key("alpha", "weight of the codeword classification loss; default 1", &PretrainConfig::alpha));
    s.push_back(number_key("beta", "weight of the representation regression loss; default 1",
                           &PretrainConfig::beta));
    s.push_back(number_key("lr", "Adam learning rate; default 0.001", &PretrainConfig::lr));
    s.push_back(number_key("batch_size", "minibatch size; default 64", &PretrainConfig::batch_size));
    s.push_back(number_key("epochs", "pre-training epochs; default 100", &PretrainConfig::epochs));
    s.push_back(number_key("dropout", "dropout rate; default 0.2", &PretrainConfig::dropout));
    s.push_back(number_key("seed", "run seed; default 42", &PretrainConfig::seed));
    s.push_back({"target_input", "full | masked: target encoder input; default full",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "full") {
                     c.pretrain.target_input = TargetInput::FullSequence;
                   } else if (v == "masked") {
                     c.pretrain.target_input = TargetInput::MaskedOnly;
                   } else {
                     throw ConfigError("target_input must be 'full' or 'masked', got '" + v + "'");
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.pretrain.target_input); }});
    s.push_back({"hard_from_noisy", "take hard codewords from Gumbel-perturbed scores; default false",
                 [](RunConfig& c, const std::string& v) {
                   c.pretrain.hard_from_noisy = parse_bool("hard_from_noisy", v);
                 },
                 [](const RunConfig& c) { return std::string(c.pretrain.hard_from_noisy ? "true" : "false"); }});
    s.push_back(number_key("grad_clip", "global grad-norm clip, 0 = off; default 0", &PretrainConfig::grad_clip));
    s.push_back(number_key("max_positions", "position table rows, 0 = from data; default 0",
                           &PretrainConfig::max_positions));
    s.push_back({"check_target_grads", "assert zero target-encoder grads each step; default false",
                 [](RunConfig& c, const std::string& v) {
                   c.pretrain.check_target_grads = parse_bool("check_target_grads", v);
                 },
                 [](const RunConfig& c) { return std::string(c.pretrain.check_target_grads ? "true" : "false"); }});
    s.push_back(run_number_key("finetune_epochs", "fine-tuning epochs; default 40", &RunConfig::finetune_epochs));
    s.push_back(run_number_key("finetune_lr", "fine-tuning lr, 0 = lr; default 0", &RunConfig::finetune_lr));
    s.push_back({"pool_include_padding", "mean pooling covers the zero-padded last slice; default true",
                 [](RunConfig& c, const std::string& v) {
                   c.pool_include_padding = parse_bool("pool_include_padding", v);
                 },
                 [](const RunConfig& c) { return std::string(c.pool_include_padding ? "true" : "false"); }});
    s.push_back({"normalize", "none | zscore; default none",
                 [](RunConfig& c, const std::string& v) { c.normalize = parse_normalize_mode(v); },
                 [](const RunConfig& c) {
                   return std::string(c.normalize == NormalizeMode::None ? "none" : "zscore");
                 }});
    s.push_back({"deterministic", "single-threaded bit-reproducible kernels; default true",
                 [](RunConfig& c, const std::string& v) { c.deterministic = parse_bool("deterministic", v); },
                 [](const RunConfig& c) { return std::string(c.deterministic ? "true" : "false"); }});
    s.push_back(string_key("data", "training data path (TSB1 or CSV)", &RunConfig::data));
    s.push_back(string_key("test", "held-out data path", &RunConfig::test));
    s.push_back(string_key("ckpt", "input checkpoint path, or 'random'", &RunConfig::ckpt));
    s.push_back(string_key("out", "output path", &RunConfig::out));
    s.push_back({"mode", "last | all: fine-tuning protocol; default last",
                 [](RunConfig& c, const std::string& v) {
                   parse_finetune_mode(v);
                   c.mode = v;
                 },
                 [](const RunConfig& c) { return c.mode; }});
    s.push_back(string_key("metrics_file", "also append metric records here", &RunConfig::metrics_file));
    return s;
  }();
  return specs;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& s : key_specs()) n.push_back(s.name);
    return n;
  }();
  return names;
}

std::string RunConfig::describe_keys() {
  std::ostringstream os;
  for (const auto& s : key_specs()) os << "  " << s.name << ": " << s.doc << '\n';
  return os.str();
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& s : key_specs()) {
    if (s.name == key) {
      s.set(*this, value);
      return;
    }
  }
  std::string valid;
  for (const auto& k : keys()) valid += (valid.empty() ? "" : ", ") + k;
  throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
}

void RunConfig::apply_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& s : key_specs()) os << s.name << " = " << s.get(*this) << '\n';
  return os.str();
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  c.apply_text(text);
  return c;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

TIMEMAE_END_NAMESPACE
