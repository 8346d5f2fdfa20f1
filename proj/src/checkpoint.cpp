#include "timemae/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <map>

#include "timemae/errors.hpp"

TIMEMAE_BEGIN_NAMESPACE

namespace {

constexpr char kMagic[4] = {'T', 'M', 'A', 'E'};

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(source_ + ": truncated checkpoint while reading " + what + " at byte " + std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

Shape to_shape(const std::vector<std::uint32_t>& dims) { return {dims.begin(), dims.end()}; }

/// Copies every checkpoint tensor into the pack tensor of the same name.
template <class Pack>
void load_into(Pack& pack, const Checkpoint& ckpt, const std::string& skip_prefix = "") {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  pack.visit("", [&](const std::string& raw, Tensor& dst) {
    const std::string name = raw.front() == '.' ? raw.substr(1) : raw;
    if (!skip_prefix.empty() && name.rfind(skip_prefix, 0) == 0) return;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
    if (to_shape(it->second->dims) != dst.shape()) {
      throw CompatibilityError("checkpoint tensor '" + name + "' has shape " + shape_str(to_shape(it->second->dims)) +
                               ", model expects " + shape_str(dst.shape()));
    }
    auto out = dst.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Real>(it->second->values[i]);
  });
}

const CheckpointTensor& require(const Checkpoint& ckpt, const std::string& name) {
  const CheckpointTensor* t = ckpt.find(name);
  if (!t) throw FormatError("checkpoint lacks tensor '" + name + "'");
  return *t;
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

Checkpoint make_checkpoint(const ParamList& params, const std::string& config_text) {
  Checkpoint c;
  c.config_text = config_text;
  for (const auto& [name, t] : params) {
    CheckpointTensor ct;
    ct.name = name;
    for (auto d : t.shape()) ct.dims.push_back(static_cast<std::uint32_t>(d));
    ct.values.reserve(t.numel());
    for (Real v : t.data()) ct.values.push_back(static_cast<float>(v));
    c.tensors.push_back(std::move(ct));
  }
  return c;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string out(kMagic, 4);
  put_le(out, ckpt.version, 4);
  put_le(out, ckpt.tensors.size(), 4);
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xffff) throw ContractError("tensor name too long: " + t.name.substr(0, 32));
    if (t.dims.size() > 0xff) throw ContractError("tensor rank too large: " + t.name);
    put_le(out, t.name.size(), 2);
    out += t.name;
    put_le(out, t.dims.size(), 1);
    for (auto d : t.dims) put_le(out, d, 4);
    for (float v : t.values) put_le(out, std::bit_cast<std::uint32_t>(v), 4);
  }
  put_le(out, ckpt.config_text.size(), 4);
  out += ckpt.config_text;

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw FormatError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Reader r(bytes, path.string());
  if (r.take(4, "magic") != std::string(kMagic, 4)) throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  Checkpoint c;
  c.version = static_cast<std::uint32_t>(r.le(4, "version"));
  if (c.version != kCheckpointVersion) {
    throw CompatibilityError(path.string() + ": checkpoint format version " + std::to_string(c.version) +
                             ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  auto count = r.le(4, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.take(r.le(2, "name length"), "name");
    auto rank = r.le(1, "rank");
    std::size_t numel = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      t.dims.push_back(static_cast<std::uint32_t>(r.le(4, "dims")));
      numel *= t.dims.back();
    }
    t.values.resize(numel);
    for (auto& v : t.values) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.le(4, "payload")));
    c.tensors.push_back(std::move(t));
  }
  c.config_text = r.take(r.le(4, "config length"), "config echo");
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after config echo");
  return c;
}

void save_state(const ModelState& state, const RunConfig& run, const std::filesystem::path& path) {
  RunConfig echo = run;
  echo.pretrain = state.config;
  write_checkpoint(make_checkpoint(state.all_params(), echo.to_text()), path);
}

void save_model(const DownstreamModel& model, const RunConfig& run, const std::filesystem::path& path) {
  RunConfig echo = run;
  echo.pretrain = model.config;
  write_checkpoint(make_checkpoint(collect_params(model, ""), echo.to_text()), path);
}

ModelState state_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.has_head()) throw CompatibilityError("checkpoint holds a fine-tuned model, not a pre-training state");
  PretrainConfig cfg = ckpt.config().pretrain;
  const auto& conv = require(ckpt, "featurizer.conv_weight");
  const auto& pos = require(ckpt, "featurizer.positions");
  if (conv.dims.size() != 3 || pos.dims.size() != 2) throw FormatError("featurizer tensors have unexpected rank");
  ModelState s = ModelState::init(cfg, conv.dims[1], pos.dims[0]);
  load_into(s, ckpt);
  return s;
}

DownstreamModel model_from_checkpoint(const Checkpoint& ckpt, std::size_t n_classes) {
  PretrainConfig cfg = ckpt.config().pretrain;
  const auto& conv = require(ckpt, "featurizer.conv_weight");
  const auto& pos = require(ckpt, "featurizer.positions");
  if (conv.dims.size() != 3 || pos.dims.size() != 2) throw FormatError("featurizer tensors have unexpected rank");
  if (const auto* head = ckpt.find("head.weight")) {
    if (head->dims.size() != 2) throw FormatError("head.weight has unexpected rank");
    if (n_classes != 0 && head->dims[1] != n_classes) {
      throw CompatibilityError("checkpoint head has " + std::to_string(head->dims[1]) + " classes, data has " +
                               std::to_string(n_classes));
    }
    n_classes = head->dims[1];
  }
  DownstreamModel m = DownstreamModel::from_state(ModelState::init(cfg, conv.dims[1], pos.dims[0]), n_classes);
  load_into(m, ckpt, ckpt.has_head() ? "" : "head.");
  return m;
}

TIMEMAE_END_NAMESPACE
