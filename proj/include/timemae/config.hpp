#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "timemae/dataset.hpp"
#include "timemae/encoder.hpp"
#include "timemae/precision.hpp"

TIMEMAE_BEGIN_NAMESPACE

/// What the momentum encoder sees when producing regression targets.
enum class TargetInput {
  FullSequence,  // whole uncorrupted sequence, masked rows selected afterwards
  MaskedOnly,    // only the masked-row embeddings
};

enum class FinetuneMode { FineLast, FineAll };

std::string to_string(TargetInput v);
std::string to_string(FinetuneMode v);
FinetuneMode parse_finetune_mode(const std::string& text);

struct PretrainConfig {
  std::size_t sigma = 8;
  double mask_ratio = 0.6;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t visible_depth = 8;
  std::size_t decoupled_depth = 6;
  std::size_t ff_dim = 0;  // 0 -> 4 * d_model
  std::size_t codebook_size = 64;
  double tau = 1.0;
  double tau_final = 0.0;  // > 0 enables a linear anneal from tau to tau_final
  double eta = 0.99;
  double alpha = 1.0;
  double beta = 1.0;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  double dropout = 0.2;
  std::uint64_t seed = 42;
  TargetInput target_input = TargetInput::FullSequence;
  bool hard_from_noisy = false;
  double grad_clip = 0.0;          // 0 disables clipping
  std::size_t max_positions = 0;   // 0 -> ceil(T / sigma) of the pre-training data
  bool check_target_grads = false; // assert zero target-encoder grads every step

  std::size_t ff_width() const { return ff_dim ? ff_dim : 4 * d_model; }
  EncoderConfig visible_config() const;
  EncoderConfig decoupled_config() const;
  void validate() const;
};

struct FinetuneConfig {
  FinetuneMode mode = FinetuneMode::FineLast;
  std::size_t epochs = 40;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 42;
  bool pool_include_padding = true;
};

/// Everything a CLI run can set: model and optimizer keys, data handling,
/// and paths. Rendered and parsed as flat `key = value` text.
struct RunConfig {
  PretrainConfig pretrain;
  std::size_t finetune_epochs = 40;
  double finetune_lr = 0.0;  // 0 -> same as lr
  bool pool_include_padding = true;
  NormalizeMode normalize = NormalizeMode::None;
  bool deterministic = true;
  std::string data;
  std::string test;
  std::string ckpt;
  std::string out;
  std::string mode = "last";
  std::string metrics_file;

  FinetuneConfig finetune_config() const;

  /// Applies one assignment; throws ConfigError for unknown keys (the message
  /// lists the valid ones) or unparsable values.
  void set(const std::string& key, const std::string& value);
  /// Applies `key = value` lines; `#` starts a comment.
  void apply_text(const std::string& text);
  /// Applies a single "key=value" override.
  void apply_override(const std::string& assignment);
  /// Every key with its current value, one per line, in a fixed order.
  std::string to_text() const;

  static const std::vector<std::string>& keys();
  static std::string describe_keys();
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

TIMEMAE_END_NAMESPACE
