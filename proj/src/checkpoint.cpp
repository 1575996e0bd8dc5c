#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "attflow/errors.hpp"
#include "attflow/train.hpp"

// Layout (all integers little-endian):
//   "ATFLCKPT" | u32 version | u32 variant | u32 n, u64 x n model config |
//   u64 seed | u64 epoch | u64 step | str rng | u32 n, (u32 group, f64 lr) x n |
//   f64 momentum | table parameters | table velocity | u64 FNV-1a of all prior bytes
// where table = u32 n, (str name, u32 ndim, u64 dims.., f64 values..) x n
// and str = u64 length + bytes.

namespace attflow::train {

namespace {

constexpr char kMagic[8] = {'A', 'T', 'F', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kMaxDims = 8;

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u64(s.size());
    out.insert(out.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> out;

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
  }
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, std::size_t start) : bytes_(b), pos_(start) {}
  std::uint32_t u32(const char* what) { return std::uint32_t(get(4, what)); }
  std::uint64_t u64(const char* what) { return get(8, what); }
  double f64(const char* what) { return std::bit_cast<double>(get(8, what)); }
  std::string str(const char* what) {
    const std::size_t at = pos_;
    const std::uint64_t n = u64(what);
    if (n > remaining()) throw FormatError(std::string("checkpoint: truncated ") + what, at);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::uint64_t get(int n, const char* what) {
    if (remaining() < std::size_t(n)) {
      throw FormatError(std::string("checkpoint: truncated ") + what, pos_);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

std::vector<std::uint64_t> config_fields(const model::ModelConfig& m) {
  std::vector<std::uint64_t> v;
  for (auto x : m.encoder.widths) v.push_back(x);
  for (auto x : m.encoder.blocks) v.push_back(x);
  for (auto x : m.encoder.dilation) v.push_back(x);
  v.push_back(m.generator.residual_blocks);
  v.push_back(m.generator.width);
  v.push_back(m.generator.out_channels);
  v.push_back(m.generator.zero_init_output);
  for (auto x : m.channel.pool_grid) v.push_back(x);
  v.push_back(m.channel.mid_channels);
  for (auto x : m.channel.conv1_kernel) v.push_back(x);
  v.push_back(m.channel.conv1_stride);
  v.push_back(m.channel.conv1_padding);
  for (auto x : m.channel.conv2_kernel) v.push_back(x);
  v.push_back(m.spatial.channels);
  v.push_back(m.spatial.bottleneck_channels);
  v.push_back(m.upsample);
  return v;
}

model::ModelConfig config_from_fields(const std::vector<std::uint64_t>& v) {
  model::ModelConfig m;
  std::size_t k = 0;
  for (auto& x : m.encoder.widths) x = v[k++];
  for (auto& x : m.encoder.blocks) x = v[k++];
  for (auto& x : m.encoder.dilation) x = v[k++];
  m.generator.residual_blocks = v[k++];
  m.generator.width = v[k++];
  m.generator.out_channels = v[k++];
  m.generator.zero_init_output = v[k++] != 0;
  for (auto& x : m.channel.pool_grid) x = v[k++];
  m.channel.mid_channels = v[k++];
  for (auto& x : m.channel.conv1_kernel) x = v[k++];
  m.channel.conv1_stride = v[k++];
  m.channel.conv1_padding = v[k++];
  for (auto& x : m.channel.conv2_kernel) x = v[k++];
  m.spatial.channels = v[k++];
  m.spatial.bottleneck_channels = v[k++];
  m.upsample = v[k++];
  return m;
}

using TensorTable = std::vector<std::pair<std::string, Tensor>>;

void write_table(Writer& w, const TensorTable& table) {
  w.u32(std::uint32_t(table.size()));
  for (const auto& [name, t] : table) {
    w.str(name);
    w.u32(std::uint32_t(t.ndim()));
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
}

TensorTable read_table(Reader& rr) {
  TensorTable table;
  const std::uint32_t n = rr.u32("tensor count");
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = rr.str("tensor name");
    const std::size_t ndim_at = rr.pos();
    const std::uint32_t ndim = rr.u32("tensor rank");
    if (ndim == 0 || ndim > kMaxDims) {
      throw FormatError("checkpoint: tensor '" + name + "' has invalid rank " + std::to_string(ndim),
                        ndim_at);
    }
    Shape shape(ndim);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = rr.u64("tensor shape");
      numel *= d;
    }
    if (numel > rr.remaining() / 8) {
      throw FormatError("checkpoint: truncated data for tensor '" + name + "'", rr.pos());
    }
    std::vector<double> values(numel);
    for (auto& v : values) v = rr.f64("tensor data");
    table.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return table;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(Checkpoint::kVersion);
  w.u32(std::uint32_t(c.variant));
  const auto fields = config_fields(c.model);
  w.u32(std::uint32_t(fields.size()));
  for (auto f : fields) w.u64(f);
  w.u64(c.seed);
  w.u64(c.epoch);
  w.u64(c.step);
  w.str(c.rng_state);
  w.u32(std::uint32_t(c.lr.size()));
  for (const auto& [g, rate] : c.lr) {
    w.u32(std::uint32_t(g));
    w.f64(rate);
  }
  w.f64(c.momentum);
  write_table(w, c.tensors);
  write_table(w, c.velocity);
  w.u64(fnv1a(w.out));
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError("checkpoint: bad magic", 0);
  }
  Reader rr(bytes, sizeof kMagic);
  auto offset = [&] { return rr.pos(); };

  const std::uint32_t version = rr.u32("version");
  if (version != Checkpoint::kVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(Checkpoint::kVersion) + ")");
  }

  Checkpoint c;
  const std::size_t variant_at = offset();
  const std::uint32_t variant = rr.u32("variant");
  if (variant > std::uint32_t(model::Variant::SpatialAttention)) {
    throw FormatError("checkpoint: unknown variant " + std::to_string(variant), variant_at);
  }
  c.variant = model::Variant(variant);

  const std::size_t nfields_at = offset();
  const std::uint32_t nfields = rr.u32("model config");
  const std::size_t expected_fields = config_fields(model::ModelConfig{}).size();
  if (nfields != expected_fields) {
    throw FormatError("checkpoint: model config has " + std::to_string(nfields) + " fields, expected " +
                          std::to_string(expected_fields),
                      nfields_at);
  }
  std::vector<std::uint64_t> fields(nfields);
  for (auto& f : fields) f = rr.u64("model config");
  c.model = config_from_fields(fields);

  c.seed = rr.u64("seed");
  c.epoch = rr.u64("epoch");
  c.step = rr.u64("step");
  c.rng_state = rr.str("rng state");

  const std::size_t nlr_at = offset();
  const std::uint32_t nlr = rr.u32("learning rates");
  if (nlr > 4) throw FormatError("checkpoint: too many learning-rate groups", nlr_at);
  for (std::uint32_t i = 0; i < nlr; ++i) {
    const std::size_t g_at = offset();
    const std::uint32_t g = rr.u32("learning rates");
    if (g > std::uint32_t(model::ParamGroup::SpatialAttention)) {
      throw FormatError("checkpoint: unknown parameter group " + std::to_string(g), g_at);
    }
    c.lr[model::ParamGroup(g)] = rr.f64("learning rates");
  }

  c.momentum = rr.f64("momentum");
  c.tensors = read_table(rr);
  c.velocity = read_table(rr);

  const std::size_t sum_at = offset();
  const std::uint64_t stored = rr.u64("checksum");
  if (stored != fnv1a(bytes.first(sum_at))) {
    throw FormatError("checkpoint: checksum mismatch", sum_at);
  }
  if (rr.remaining() != 0) throw FormatError("checkpoint: trailing bytes", offset());
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!os) throw IoError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace attflow::train
