#include "unicon/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace unicon {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'U', 'C', 'K', 'P'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw CheckpointError("checkpoint: record runs past the end at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::map<std::string, Tensor>& tensors, std::uint32_t version) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, version);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t d : t.shape()) put<std::int64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.bytes());
  }
  put<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

std::map<std::string, Tensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("checkpoint: bad magic, not a UCKP file");
  }
  if (bytes.size() < 4 + 4 + 8 + 4) {
    throw CheckpointCrcError("checkpoint: CRC check failed, file is " + std::to_string(bytes.size()) +
                             " bytes, too short to hold a header and CRC");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  const std::uint32_t computed = crc_of(bytes.data(), body);
  if (stored != computed) {
    std::ostringstream msg;
    msg << "checkpoint: CRC mismatch over bytes [0, " << body << "): stored 0x" << std::hex << stored
        << ", computed 0x" << computed;
    throw CheckpointCrcError(msg.str());
  }
  Reader in(bytes, body);
  in.take(4);
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint: unknown format version " + std::to_string(version));
  }
  const auto count = in.get<std::uint64_t>();
  std::map<std::string, Tensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint32_t>();
    std::string name(in.take(len), len);
    const auto dtype = in.get<std::uint8_t>();
    if (dtype != 0) throw CheckpointError("checkpoint: unsupported dtype code " + std::to_string(dtype) + " for " + name);
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError("checkpoint: implausible rank for " + name);
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(in.get<std::int64_t>());
      if (shape.back() < 0) throw CheckpointError("checkpoint: negative dimension for " + name);
      numel *= shape.back();
    }
    Tensor t(shape);
    std::memcpy(t.data(), in.take(static_cast<std::size_t>(numel) * sizeof(float)), t.bytes());
    if (!out.emplace(std::move(name), std::move(t)).second) throw CheckpointError("checkpoint: duplicate tensor name");
  }
  if (in.pos() != body) throw CheckpointError("checkpoint: trailing bytes after the last record");
  return out;
}

std::map<std::string, Tensor> module_tensors(const Module& module) {
  std::map<std::string, Tensor> out;
  for (const Parameter* p : parameters(module)) out.emplace(p->name, p->value);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Module& module) {
  const std::string bytes = encode_checkpoint(module_tensors(module));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

void load_checkpoint(const std::filesystem::path& path, Module& module) {
  std::map<std::string, Tensor> stored = read_checkpoint(path);
  const auto params = parameters(module);
  for (Parameter* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw CheckpointMismatchError("checkpoint: missing tensor " + p->name);
    if (it->second.shape() != p->value.shape()) {
      throw CheckpointMismatchError("checkpoint: " + p->name + " has shape " + to_string(it->second.shape()) +
                                    ", model expects " + to_string(p->value.shape()));
    }
  }
  if (stored.size() != params.size()) {
    for (const auto& [name, t] : stored) {
      const bool known = std::any_of(params.begin(), params.end(), [&](const Parameter* p) { return p->name == name; });
      if (!known) throw CheckpointMismatchError("checkpoint: unexpected tensor " + name);
    }
  }
  for (Parameter* p : params) p->value = std::move(stored.at(p->name));
}

}  // namespace unicon
