#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "BRACE1"                       6-byte magic
//   u32 format_version             currently 1
//   u32 array_count
//   array_count x {
//     u32 name_len, name bytes (UTF-8)
//     u32 rank, u64 dims[rank]
//     f32 values[product(dims)]
//   }
//   u64 metadata_len, metadata     UTF-8 `key = value` lines
//   u64 checksum                   FNV-1a 64 over every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "brace/config.hpp"
#include "brace/error.hpp"
#include "brace/hash.hpp"
#include "brace/model.hpp"

namespace brace {

inline constexpr char kCheckpointMagic[6] = {'B', 'R', 'A', 'C', 'E', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<unsigned char>& bytes() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  void need(std::size_t n) const {
    if (pos_ + n > size_) throw FormatError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::string str() { return bytes(u32()); }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Everything that describes a model's structure, as key/value metadata.
template <typename T>
KeyValueConfig model_metadata(const Model<T>& model) {
  KeyValueConfig kv;
  kv.set("format.version", std::to_string(kCheckpointVersion));
  model.config().write(kv);
  model.tokenizer().write(kv);
  if (model.has_brace()) model.brace_config().write(kv);
  kv.set("steering.attached", model.has_steering() ? "true" : "false");
  if (model.has_lora()) model.lora_spec().write(kv);
  bool frozen = true;
  for (const auto& p : model.params())
    if (p->group() == ParamGroup::backbone && p->trainable()) frozen = false;
  kv.set("state.backbone_frozen", frozen ? "true" : "false");
  write_attribute_sets(kv, model.attribute_sets());
  return kv;
}

template <typename T>
std::vector<unsigned char> serialize_checkpoint(const Model<T>& model) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    w.str(p->name());
    const Shape& shape = p->value().shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto dim : shape) w.u64(dim);
    for (T v : p->value().data()) w.f32(static_cast<float>(v));
  }
  const std::string meta = model_metadata(model).serialize();
  w.u64(meta.size());
  w.raw(meta.data(), meta.size());
  Fnv1a64 h;
  h.update(w.bytes().data(), w.bytes().size());
  w.u64(h.digest());
  return std::move(w.bytes());
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Checksum of a whole checkpoint file's contents.
inline std::uint64_t checkpoint_digest(const std::vector<unsigned char>& bytes) {
  Fnv1a64 h;
  h.update(bytes.data(), bytes.size());
  return h.digest();
}

template <typename T>
Model<T> deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError("not a Brace checkpoint (bad magic)");
  }
  if (bytes.size() < sizeof(kCheckpointMagic) + 4 + 8) {
    throw FormatError("checkpoint checksum mismatch (file truncated)");
  }
  const std::size_t body = bytes.size() - 8;
  detail::ByteReader tail(bytes.data() + body, 8);
  Fnv1a64 h;
  h.update(bytes.data(), body);
  if (tail.u64() != h.digest()) {
    throw FormatError("checkpoint checksum mismatch (corrupted or truncated file)");
  }

  detail::ByteReader r(bytes.data() + sizeof(kCheckpointMagic), body - sizeof(kCheckpointMagic));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(brace::detail::concat("unsupported checkpoint version ", version,
                                            " (expected ", kCheckpointVersion, ")"));
  }
  struct Array {
    std::string name;
    Shape shape;
    std::vector<float> values;
  };
  std::vector<Array> arrays(r.u32());
  for (auto& a : arrays) {
    a.name = r.str();
    a.shape.resize(r.u32());
    for (auto& dim : a.shape) dim = static_cast<std::size_t>(r.u64());
    const std::size_t n = shape_numel(a.shape);
    r.need(n * 4);
    a.values.resize(n);
    for (auto& v : a.values) v = r.f32();
  }
  const auto meta = KeyValueConfig::parse(r.bytes(static_cast<std::size_t>(r.u64())));
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint metadata");

  const Tokenizer tok = Tokenizer::read(meta);
  Model<T> model = Model<T>::create(ModelConfig::read(meta), tok);
  if (meta.has("brace.rank")) model.attach_brace(BraceConfig::read(meta));
  if (meta.get_bool("steering.attached", false)) model.attach_steering();
  if (meta.has("lora.rank")) model.attach_lora(LoraSpec::read(meta));
  model.attribute_sets() = read_attribute_sets(meta);

  if (arrays.size() != model.params().size()) {
    throw FormatError(brace::detail::concat("checkpoint has ", arrays.size(),
                                            " arrays, model expects ", model.params().size()));
  }
  for (auto& a : arrays) {
    auto& p = model.params().at(a.name);
    std::vector<T> vals(a.values.begin(), a.values.end());
    p.assign(Tensor<T>(a.shape, std::move(vals)));
  }
  if (meta.get_bool("state.backbone_frozen", false)) model.freeze_backbone();
  return model;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<T>(read_file_bytes(path));
}

}  // namespace brace
