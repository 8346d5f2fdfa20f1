#include "timemae/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "timemae/errors.hpp"
#include "timemae/rng.hpp"

TIMEMAE_BEGIN_NAMESPACE

static_assert(std::endian::native == std::endian::little, "TSB1 I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'S', 'B', '1'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

bool get_u32(std::istream& is, std::uint32_t& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), 4));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffULL) throw FormatError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

DatasetHeader read_header(std::istream& is, const std::string& where) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(where + ": bad magic, expected TSB1");
  }
  DatasetHeader h;
  std::uint32_t has_labels = 0;
  if (!get_u32(is, h.n_examples) || !get_u32(is, h.length) || !get_u32(is, h.channels) ||
      !get_u32(is, h.n_classes) || !get_u32(is, has_labels)) {
    throw CorruptionError(where + ": truncated header");
  }
  if (has_labels > 1) throw FormatError(where + ": has_labels must be 0 or 1");
  h.has_labels = has_labels == 1;
  if (h.length == 0 || h.channels == 0) throw FormatError(where + ": T and m must be >= 1");
  return h;
}

}  // namespace

TimeSeriesBatch TimeSeriesBatch::select(const std::vector<std::size_t>& examples) const {
  TimeSeriesBatch out;
  out.n_examples = examples.size();
  out.length = length;
  out.channels = channels;
  out.n_classes = n_classes;
  std::size_t stride = length * channels;
  out.values.resize(examples.size() * stride);
  if (labels) out.labels.emplace();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::size_t e = examples[i];
    if (e >= n_examples) throw ContractError("example index out of range");
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(e * stride), stride,
                out.values.begin() + static_cast<std::ptrdiff_t>(i * stride));
    if (labels) out.labels->push_back((*labels)[e]);
  }
  return out;
}

void TimeSeriesBatch::validate() const {
  if (length == 0 || channels == 0) throw DataError("series need T >= 1 and m >= 1");
  if (values.size() != n_examples * length * channels) {
    throw DataError("value count does not match [n, T, m]");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::size_t per = length * channels;
      throw DataError("non-finite value at example " + std::to_string(i / per) + ", time " +
                      std::to_string((i % per) / channels) + ", channel " + std::to_string(i % channels));
    }
  }
  if (labels) {
    if (labels->size() != n_examples) throw DataError("label count does not match example count");
    for (std::size_t i = 0; i < labels->size(); ++i) {
      if ((*labels)[i] >= n_classes) {
        throw DataError("label " + std::to_string((*labels)[i]) + " of example " + std::to_string(i) +
                        " outside [0, " + std::to_string(n_classes) + ")");
      }
    }
  }
}

DatasetHeader read_binary_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_header(is, path.string());
}

LoadedDataset load_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  const auto where = path.string();
  LoadedDataset out;
  out.header = read_header(is, where);
  const auto& h = out.header;

  is.seekg(0, std::ios::end);
  auto file_size = static_cast<std::uint64_t>(is.tellg());
  std::uint64_t n_values = std::uint64_t(h.n_examples) * h.length * h.channels;
  std::uint64_t expected = 24 + (h.has_labels ? 4ULL * h.n_examples : 0) + 4ULL * n_values;
  if (file_size != expected) {
    throw CorruptionError(where + ": file holds " + std::to_string(file_size) + " bytes, header implies " +
                          std::to_string(expected));
  }
  is.seekg(24);

  auto& b = out.batch;
  b.n_examples = h.n_examples;
  b.length = h.length;
  b.channels = h.channels;
  b.n_classes = h.n_classes;
  if (h.has_labels) {
    b.labels.emplace(h.n_examples);
    is.read(reinterpret_cast<char*>(b.labels->data()), static_cast<std::streamsize>(4ULL * h.n_examples));
  }
  b.values.resize(n_values);
  is.read(reinterpret_cast<char*>(b.values.data()), static_cast<std::streamsize>(4ULL * n_values));
  if (!is) throw CorruptionError(where + ": truncated payload");
  try {
    b.validate();
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return out;
}

void write_binary(const TimeSeriesBatch& batch, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  os.write(kMagic, 4);
  put_u32(os, checked_u32(batch.n_examples, "n_examples"));
  put_u32(os, checked_u32(batch.length, "T"));
  put_u32(os, checked_u32(batch.channels, "m"));
  put_u32(os, checked_u32(batch.n_classes, "n_classes"));
  put_u32(os, batch.labels ? 1 : 0);
  if (batch.labels) {
    os.write(reinterpret_cast<const char*>(batch.labels->data()),
             static_cast<std::streamsize>(4 * batch.labels->size()));
  }
  os.write(reinterpret_cast<const char*>(batch.values.data()),
           static_cast<std::streamsize>(4 * batch.values.size()));
  if (!os) throw FormatError("write failed for " + path.string());
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for floats does not accept a leading '+'
    if (s.front() == '+') s.remove_prefix(1);
  }
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

TimeSeriesBatch parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  TimeSeriesBatch b;
  bool have_header = false;
  std::uint32_t max_label = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto view = trim(line);
    if (view.empty()) continue;
    auto fields = split_commas(view);
    if (!have_header) {
      if (fields.size() != 3 || trim(fields[0]) != "label" || !parse_number(fields[1], b.length) ||
          !parse_number(fields[2], b.channels) || b.length == 0 || b.channels == 0) {
        throw FormatError("line " + std::to_string(line_no) + ": expected header 'label,T,m'");
      }
      have_header = true;
      b.labels.emplace();
      continue;
    }
    std::size_t want = 1 + b.length * b.channels;
    if (fields.size() != want) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(want) +
                        " fields, found " + std::to_string(fields.size()));
    }
    std::uint32_t label = 0;
    if (!parse_number(fields[0], label)) {
      throw FormatError("line " + std::to_string(line_no) + ": label is not a non-negative integer");
    }
    b.labels->push_back(label);
    max_label = std::max(max_label, label);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      float v = 0;
      if (!parse_number(fields[i], v)) {
        throw FormatError("line " + std::to_string(line_no) + ": field " + std::to_string(i + 1) +
                          " is not a number");
      }
      b.values.push_back(v);
    }
    ++b.n_examples;
  }
  if (!have_header) throw FormatError("missing 'label,T,m' header line");
  b.n_classes = b.n_examples ? max_label + 1 : 0;
  b.validate();
  return b;
}

TimeSeriesBatch load_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_csv(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_csv(const TimeSeriesBatch& batch, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "label," << batch.length << ',' << batch.channels << '\n';
  std::size_t per = batch.length * batch.channels;
  char buf[32];
  for (std::size_t e = 0; e < batch.n_examples; ++e) {
    os << (batch.labels ? (*batch.labels)[e] : 0u);
    for (std::size_t i = 0; i < per; ++i) {
      // shortest representation that round-trips float32 exactly
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), batch.values[e * per + i]);
      os << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    os << '\n';
  }
}

TimeSeriesBatch load_dataset(const std::filesystem::path& path) {
  if (path.extension() == ".csv") return load_csv(path);
  return load_binary(path).batch;
}

NormalizeMode parse_normalize_mode(const std::string& text) {
  if (text == "none") return NormalizeMode::None;
  if (text == "zscore") return NormalizeMode::ZScore;
  throw ConfigError("normalize must be 'none' or 'zscore', got '" + text + "'");
}

TimeSeriesBatch normalize(const TimeSeriesBatch& batch, NormalizeMode mode) {
  TimeSeriesBatch out = batch;
  if (mode == NormalizeMode::None) return out;
  std::size_t m = batch.channels;
  std::size_t rows = batch.n_examples * batch.length;
  if (rows == 0) return out;
  for (std::size_t c = 0; c < m; ++c) {
    double mu = 0;
    for (std::size_t r = 0; r < rows; ++r) mu += batch.values[r * m + c];
    mu /= static_cast<double>(rows);
    double var = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      double d = batch.values[r * m + c] - mu;
      var += d * d;
    }
    double sd = std::max(std::sqrt(var / static_cast<double>(rows)), 1e-6);
    for (std::size_t r = 0; r < rows; ++r) {
      out.values[r * m + c] = static_cast<float>((batch.values[r * m + c] - mu) / sd);
    }
  }
  return out;
}

namespace {

/// Motif k evaluated at u in (0, 1): rise, fall, arch, then cosines of
/// increasing frequency; all span roughly [-1, 1].
double motif_shape(std::size_t k, double u) {
  switch (k) {
    case 0: return 2.0 * u - 1.0;
    case 1: return 1.0 - 2.0 * u;
    case 2: return 2.0 * std::sin(std::numbers::pi * u) - 1.0;
    default: return std::cos(std::numbers::pi * static_cast<double>(k - 1) * u);
  }
}

}  // namespace

TimeSeriesBatch make_synthetic(std::size_t n_per_class, std::size_t n_classes, std::size_t length,
                               std::size_t channels, std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("make_synthetic needs at least two classes");
  if (length == 0 || channels == 0) throw ConfigError("make_synthetic needs T >= 1 and m >= 1");
  Rng rng(seed);
  Rng noise = rng.derive("noise");
  TimeSeriesBatch b;
  b.n_examples = n_per_class * n_classes;
  b.length = length;
  b.channels = channels;
  b.n_classes = n_classes;
  b.values.resize(b.n_examples * length * channels);
  b.labels.emplace(b.n_examples);

  const double T = static_cast<double>(length);
  const double pulse_width = std::max(1.0, T / 16.0);
  const double spacing = T / static_cast<double>(n_classes);
  const std::size_t n_motifs = std::max<std::size_t>(3, n_classes);
  Rng nuisance = rng.derive("nuisance");
  for (std::size_t e = 0; e < b.n_examples; ++e) {
    std::size_t c = e % n_classes;
    (*b.labels)[e] = static_cast<std::uint32_t>(c);
    double centre = spacing * (static_cast<double>(c) + 0.5) +
                    nuisance.uniform(-kSyntheticPulseJitter, kSyntheticPulseJitter) * spacing;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      auto motif = std::min(n_motifs - 1, static_cast<std::size_t>(nuisance.uniform(0.0, static_cast<double>(n_motifs))));
      double amplitude = nuisance.uniform(kSyntheticAmplitudeMin, kSyntheticAmplitudeMax);
      for (std::size_t t = 0; t < length; ++t) {
        if (t > 0 && t % kSyntheticSegment == 0) motif = (motif + c + 1 + ch) % n_motifs;
        double u = (static_cast<double>(t % kSyntheticSegment) + 0.5) / static_cast<double>(kSyntheticSegment);
        double tt = static_cast<double>(t);
        double dist = (tt - centre) / pulse_width;
        double pulse = kSyntheticPulse * std::exp(-0.5 * dist * dist);
        double v = amplitude * motif_shape(motif, u) +
                   kSyntheticWave * std::sin(2.0 * std::numbers::pi * static_cast<double>(c + 1) * tt / T) +
                   (ch % 2 == 0 ? pulse : -pulse) + noise.normal(0.0, kSyntheticNoise);
        b.values[(e * length + t) * channels + ch] = static_cast<float>(v);
      }
    }
  }
  return b;
}

SplitResult stratified_split(const TimeSeriesBatch& batch, double test_fraction, std::uint64_t seed) {
  if (!batch.labels) throw DataError("stratified split needs labels");
  if (test_fraction < 0 || test_fraction >= 1) throw ConfigError("test fraction must lie in [0, 1)");
  Rng rng(seed);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t c = 0; c < batch.n_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t e = 0; e < batch.n_examples; ++e) {
      if ((*batch.labels)[e] == c) members.push_back(e);
    }
    Rng local = rng.derive("class", c);
    std::shuffle(members.begin(), members.end(), local.engine());
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < members.size(); ++i) {
      (i < n_test ? test_idx : train_idx).push_back(members[i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {batch.select(train_idx), batch.select(test_idx)};
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n_examples, std::size_t batch_size,
                                                    std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(n_examples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng.engine());
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n_examples; start += batch_size) {
    std::size_t end = std::min(n_examples, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

BatchIterator::BatchIterator(const TimeSeriesBatch& data, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed)
    : data_(&data), plan_(batch_indices(data.n_examples, batch_size, shuffle_seed)) {}

TimeSeriesBatch BatchIterator::next(std::vector<std::size_t>* indices) {
  if (done()) throw ContractError("BatchIterator exhausted");
  const auto& idx = plan_[next_++];
  if (indices) *indices = idx;
  return data_->select(idx);
}

TIMEMAE_END_NAMESPACE
