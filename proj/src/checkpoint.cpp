#include "fecil/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace fecil {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void bytes(const std::string& s) { raw(s.data(), s.size()); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void raw(void* p, std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    raw(&v, sizeof v, what);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    std::string s(n, '\0');
    raw(s.data(), n, what);
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw FormatError(std::string(what) + " exceeds u32 range");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

const Tensor& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no tensor named '" + name + "'");
}

bool Container::has(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(checked_u32(c.tensors.size(), "tensor count"));
  for (const auto& [name, t] : c.tensors) {
    w.u32(checked_u32(name.size(), "tensor name length"));
    w.bytes(name);
    w.u32(checked_u32(t.rank(), "rank"));
    for (std::size_t d : t.shape()) w.u32(checked_u32(d, "dimension"));
    for (float v : t.values()) w.f32(v);
  }
  w.u32(checked_u32(c.class_ids.size(), "class count"));
  for (int id : c.class_ids) {
    if (id < 0) throw FormatError("class ids must be non-negative");
    w.u32(static_cast<std::uint32_t>(id));
  }
  w.u32(checked_u32(c.echo.size(), "echo length"));
  w.bytes(c.echo);
  return std::move(w.out);
}

Container decode_container(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw FormatError("not a checkpoint: magic '" + std::string(magic, sizeof magic) + "' != 'FECILCK1'");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Container c;
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32("name length"), "tensor name");
    const std::uint32_t rank = r.u32("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("dimension");
    const std::size_t n = shape_size(shape);
    if (n > (bytes.size() - r.pos()) / sizeof(float)) {
      throw FormatError("checkpoint truncated in payload of tensor '" + name + "'");
    }
    std::vector<float> values(n);
    r.raw(values.data(), n * sizeof(float), "tensor payload");
    c.tensors.emplace_back(name, Tensor(std::move(shape), std::move(values)));
  }
  const std::uint32_t classes = r.u32("class count");
  for (std::uint32_t i = 0; i < classes; ++i) c.class_ids.push_back(static_cast<int>(r.u32("class id")));
  c.echo = r.str(r.u32("echo length"), "config echo");
  if (!r.done()) throw FormatError("trailing bytes after checkpoint at offset " + std::to_string(r.pos()));
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = encode_container(c);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

Container to_container(CompactNetwork& net, const Normalization& norm, const std::string& extra_echo) {
  Container c;
  net.extractor.visit_tensors([&c](const std::string& name, Tensor& t) { c.tensors.emplace_back("extractor." + name, t); });
  c.tensors.emplace_back("head.weight", net.head.weight().value());
  c.tensors.emplace_back("head.bias", net.head.bias().value());
  c.tensors.emplace_back("input.mean", Tensor(Shape{norm.mean.size()}, norm.mean));
  c.tensors.emplace_back("input.std", Tensor(Shape{norm.stddev.size()}, norm.stddev));
  c.class_ids = net.head.class_ids();
  c.echo = net.extractor.config().echo() + extra_echo;
  return c;
}

ModelCheckpoint from_container(const Container& c) {
  const BackboneConfig config = BackboneConfig::parse_echo(c.echo);
  Rng unused(0);
  FeatureExtractor extractor(config, unused);
  extractor.visit_tensors([&c](const std::string& name, Tensor& t) {
    const Tensor& stored = c.tensor("extractor." + name);
    if (stored.shape() != t.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(stored.shape()) + ", expected " +
                        shape_str(t.shape()));
    }
    t = stored;
  });
  Classifier head(c.tensor("head.weight"), c.tensor("head.bias"), c.class_ids);
  Normalization norm{c.tensor("input.mean").storage(), c.tensor("input.std").storage()};
  return ModelCheckpoint{CompactNetwork{std::move(extractor), std::move(head)}, std::move(norm), c.echo};
}

void save_model(const std::filesystem::path& path, CompactNetwork& net, const Normalization& norm,
                const std::string& extra_echo) {
  write_container(path, to_container(net, norm, extra_echo));
}

ModelCheckpoint load_model(const std::filesystem::path& path) { return from_container(read_container(path)); }

}  // namespace fecil
