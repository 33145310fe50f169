// Checkpoint file, little-endian:
//   "CRTCKPT\0"  u32 version  u64 payload_size  payload  u32 crc32(payload)

#include <zlib.h>

#include "crt/binary_io.hpp"
#include "crt/trainer.hpp"

namespace crt {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_tensor(binary::Writer& w, const Tensor& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) w.put<std::uint64_t>(e);
  w.put_doubles(t.data());
}

Tensor get_tensor(binary::Reader& r) {
  const auto rank = r.get<std::uint32_t>();
  if (rank > 8) throw IoError("checkpoint: implausible tensor rank");
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& e : shape) {
    e = r.get<std::uint64_t>();
    if (e == 0 || e > r.remaining()) throw IoError("checkpoint: bad tensor extent");
    n *= e;
  }
  if (n * sizeof(double) > r.remaining()) throw IoError("checkpoint: truncated tensor");
  return Tensor::parameter(std::move(shape), r.get_doubles(n));
}

void put_vectors(binary::Writer& w, const std::vector<std::vector<double>>& vs) {
  w.put<std::uint64_t>(vs.size());
  for (const auto& v : vs) {
    w.put<std::uint64_t>(v.size());
    w.put_doubles(v);
  }
}

std::vector<std::vector<double>> get_vectors(binary::Reader& r) {
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining()) throw IoError("checkpoint: bad vector count");
  std::vector<std::vector<double>> out(count);
  for (auto& v : out) {
    const auto n = r.get<std::uint64_t>();
    if (n * sizeof(double) > r.remaining()) throw IoError("checkpoint: truncated vector");
    v = r.get_doubles(n);
  }
  return out;
}

std::uint32_t checksum(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  const ModelState& m = ckpt.model;
  binary::Writer p;
  p.put<std::uint8_t>(m.kind == ModelState::Kind::crt ? 0 : 1);
  p.put<std::uint8_t>(m.share_head_weights ? 1 : 0);
  if (m.kind == ModelState::Kind::baseline) {
    put_tensor(p, m.baseline->weight);
    put_tensor(p, m.baseline->bias);
  } else {
    p.put<std::uint32_t>(static_cast<std::uint32_t>(m.branches.size()));
    for (const Branch& b : m.branches) {
      p.put<std::uint64_t>(b.config.prototypes);
      p.put<std::uint64_t>(b.config.hidden);
      p.put<std::uint64_t>(b.config.embedding_dim);
      p.put<std::uint8_t>(b.config.per_prototype_heads ? 1 : 0);
      p.put<double>(b.config.ms_weight);
      put_tensor(p, b.prototypes.prototypes);
      p.put<std::uint64_t>(b.heads.size());
      for (const EmbeddingHead& h : b.heads) {
        p.put<std::uint8_t>(h.activation == Activation::gelu ? 0 : 1);
        put_tensor(p, h.w1);
        put_tensor(p, h.b1);
        put_tensor(p, h.w2);
        put_tensor(p, h.b2);
      }
    }
  }
  p.put<std::uint64_t>(ckpt.step);
  p.put<std::uint64_t>(ckpt.optimizer.t);
  put_vectors(p, ckpt.optimizer.m);
  put_vectors(p, ckpt.optimizer.v);
  p.put_string(ckpt.rng_state);

  binary::Writer out;
  out.put_bytes(std::string_view(kMagic, sizeof(kMagic)));
  out.put<std::uint32_t>(kVersion);
  out.put<std::uint64_t>(p.bytes().size());
  out.put_bytes(std::string_view(reinterpret_cast<const char*>(p.bytes().data()), p.bytes().size()));
  out.put<std::uint32_t>(checksum(p.bytes()));
  return out.bytes();
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  binary::Reader frame(bytes, "checkpoint");
  if (frame.get_bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw IoError("checkpoint: bad magic");
  }
  const auto version = frame.get<std::uint32_t>();
  if (version != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const auto size = frame.get<std::uint64_t>();
  if (size + 4 != frame.remaining()) throw IoError("checkpoint: size mismatch");
  const auto payload = bytes.subspan(frame.position(), size);
  frame.get_bytes(size);
  if (frame.get<std::uint32_t>() != checksum(payload)) throw IoError("checkpoint: checksum mismatch");

  binary::Reader r(payload, "checkpoint");
  Checkpoint ckpt;
  ModelState& m = ckpt.model;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw IoError("checkpoint: unknown model kind");
  m.kind = kind == 0 ? ModelState::Kind::crt : ModelState::Kind::baseline;
  m.share_head_weights = r.get<std::uint8_t>() != 0;
  if (m.kind == ModelState::Kind::baseline) {
    LinearBaseline base;
    base.weight = get_tensor(r);
    base.bias = get_tensor(r);
    m.baseline = std::move(base);
  } else {
    const auto branches = r.get<std::uint32_t>();
    if (branches < 1 || branches > 2) throw IoError("checkpoint: bad branch count");
    for (std::uint32_t i = 0; i < branches; ++i) {
      Branch b;
      b.config.prototypes = r.get<std::uint64_t>();
      b.config.hidden = r.get<std::uint64_t>();
      b.config.embedding_dim = r.get<std::uint64_t>();
      b.config.per_prototype_heads = r.get<std::uint8_t>() != 0;
      b.config.ms_weight = r.get<double>();
      b.prototypes = PrototypeSet(get_tensor(r));
      const auto heads = r.get<std::uint64_t>();
      if (heads != b.config.head_count()) throw IoError("checkpoint: head count mismatch");
      for (std::uint64_t k = 0; k < heads; ++k) {
        EmbeddingHead h;
        h.activation = r.get<std::uint8_t>() == 0 ? Activation::gelu : Activation::identity;
        h.w1 = get_tensor(r);
        h.b1 = get_tensor(r);
        h.w2 = get_tensor(r);
        h.b2 = get_tensor(r);
        b.heads.push_back(std::move(h));
      }
      m.branches.push_back(std::move(b));
    }
    m.link_shared_heads();
  }
  ckpt.step = r.get<std::uint64_t>();
  ckpt.optimizer.t = r.get<std::uint64_t>();
  ckpt.optimizer.m = get_vectors(r);
  ckpt.optimizer.v = get_vectors(r);
  ckpt.rng_state = r.get_string();
  if (r.remaining() != 0) throw IoError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  binary::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(binary::read_file(path));
}

}  // namespace crt
