#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "timemae/precision.hpp"

TIMEMAE_BEGIN_NAMESPACE

/// Raw multivariate series, [examples, time, channels] row-major.
struct TimeSeriesBatch {
  std::size_t n_examples = 0;
  std::size_t length = 0;    // T
  std::size_t channels = 0;  // m
  std::size_t n_classes = 0;
  std::vector<float> values;
  std::optional<std::vector<std::uint32_t>> labels;

  float at(std::size_t example, std::size_t t, std::size_t channel) const {
    return values[(example * length + t) * channels + channel];
  }
  /// Copies the listed examples, in order.
  TimeSeriesBatch select(const std::vector<std::size_t>& examples) const;
  /// Throws DataError on non-finite values or out-of-range labels.
  void validate() const;
};

struct DatasetHeader {
  std::uint32_t n_examples = 0;
  std::uint32_t length = 0;
  std::uint32_t channels = 0;
  std::uint32_t n_classes = 0;
  bool has_labels = false;

  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

struct LoadedDataset {
  TimeSeriesBatch batch;
  DatasetHeader header;
};

// TSB1 (little-endian): "TSB1", u32 n_examples, u32 T, u32 m, u32 n_classes,
// u32 has_labels, [n_examples x u32 labels], n_examples*T*m float32 values.
LoadedDataset load_binary(const std::filesystem::path& path);
void write_binary(const TimeSeriesBatch& batch, const std::filesystem::path& path);
/// Header-only read, used to validate shapes without loading the payload.
DatasetHeader read_binary_header(const std::filesystem::path& path);

// CSV: header line "label,T,m"; then one row per example: label followed by
// T*m values in time-major order (t0c0, t0c1, ..., t1c0, ...).
TimeSeriesBatch load_csv(const std::filesystem::path& path);
void write_csv(const TimeSeriesBatch& batch, const std::filesystem::path& path);
TimeSeriesBatch parse_csv(const std::string& text);

/// Loads either format, chosen by extension (.csv vs anything else).
TimeSeriesBatch load_dataset(const std::filesystem::path& path);

enum class NormalizeMode { None, ZScore };
NormalizeMode parse_normalize_mode(const std::string& text);

/// Per-channel z-score across all examples and time steps (std floored at 1e-6).
TimeSeriesBatch normalize(const TimeSeriesBatch& batch, NormalizeMode mode);

/// Balanced labelled toy data. Class c carries a sinusoid with (c + 1)
/// cycles over the window and a pulse centred in the c-th of n_classes equal
/// segments (sign alternating by channel). On top of that each channel is a
/// run of kSyntheticSegment-step motifs: the first motif is random and class c
/// advances the motif index by (c + 1 + channel) per segment, so the motif
/// order is class-dependent too. Amplitude, start motif and pulse offset vary
/// per example; noise is N(0, 0.1^2).
TimeSeriesBatch make_synthetic(std::size_t n_per_class, std::size_t n_classes, std::size_t length,
                               std::size_t channels, std::uint64_t seed);

inline constexpr double kSyntheticNoise = 0.1;
inline constexpr double kSyntheticAmplitudeMin = 0.7;
inline constexpr double kSyntheticAmplitudeMax = 1.3;
inline constexpr double kSyntheticWave = 0.2;
inline constexpr double kSyntheticPulse = 1.0;
/// Pulse centre offset, as a fraction of the per-class segment width.
inline constexpr double kSyntheticPulseJitter = 0.15;
inline constexpr std::size_t kSyntheticSegment = 8;

/// Stratified split: within each class, the first ceil(share) examples of a
/// seeded shuffle go to the test side.
struct SplitResult {
  TimeSeriesBatch train;
  TimeSeriesBatch test;
};
SplitResult stratified_split(const TimeSeriesBatch& batch, double test_fraction, std::uint64_t seed);

/// Partition of example indices into minibatches; the order is a seeded
/// permutation when shuffle_seed is set.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n_examples, std::size_t batch_size,
                                                    std::optional<std::uint64_t> shuffle_seed);

/// Materialized minibatches (see batch_indices).
class BatchIterator {
 public:
  BatchIterator(const TimeSeriesBatch& data, std::size_t batch_size,
                std::optional<std::uint64_t> shuffle_seed);

  bool done() const { return next_ >= plan_.size(); }
  std::size_t size() const { return plan_.size(); }
  const std::vector<std::size_t>& indices(std::size_t i) const { return plan_[i]; }
  /// Next minibatch together with the dataset indices it covers.
  TimeSeriesBatch next(std::vector<std::size_t>* indices = nullptr);

 private:
  const TimeSeriesBatch* data_;
  std::vector<std::vector<std::size_t>> plan_;
  std::size_t next_ = 0;
};

TIMEMAE_END_NAMESPACE
