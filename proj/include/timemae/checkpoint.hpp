#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "timemae/config.hpp"
#include "timemae/finetune.hpp"
#include "timemae/pretrain.hpp"

TIMEMAE_BEGIN_NAMESPACE

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Little-endian layout: "TMAE", u32 version, u32 tensor count, then per
// tensor u16 name length, name bytes, u8 rank, rank x u32 dims, float32
// payload; finally u32 config length and the config echo text.
struct CheckpointTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<CheckpointTensor> tensors;
  std::string config_text;

  const CheckpointTensor* find(const std::string& name) const;
  /// True when the file carries a classifier head (written after fine-tuning).
  bool has_head() const { return find("head.weight") != nullptr; }
  RunConfig config() const { return parse_config_text(config_text); }
};

Checkpoint make_checkpoint(const ParamList& params, const std::string& config_text);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws FormatError on bad magic or truncation, CompatibilityError on a
/// version other than kCheckpointVersion.
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_state(const ModelState& state, const RunConfig& run, const std::filesystem::path& path);
void save_model(const DownstreamModel& model, const RunConfig& run, const std::filesystem::path& path);

/// Rebuilds the pre-training state from the config echo and tensor shapes.
ModelState state_from_checkpoint(const Checkpoint& ckpt);
/// Featurizer + visible encoder (+ head when present, else a zero head with
/// n_classes outputs).
DownstreamModel model_from_checkpoint(const Checkpoint& ckpt, std::size_t n_classes);

TIMEMAE_END_NAMESPACE
