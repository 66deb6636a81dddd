#include "sfm/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sfm/errors.hpp"

namespace sfm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "SFMCKPT1";

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw LoadError("checkpoint is truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::map<std::string, Tensor> Checkpoint::with_prefix(const std::string& prefix) const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : arrays) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.emplace(name.substr(prefix.size()), t);
  }
  return out;
}

void Checkpoint::insert(const std::string& prefix, const std::map<std::string, Tensor>& in) {
  for (const auto& [name, t] : in) arrays[prefix + name] = t;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic);
  const std::string meta = ckpt.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint64_t>(out, ckpt.arrays.size());
  for (const auto& [name, t] : ckpt.arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put<std::int64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw LoadError("not a checkpoint file (bad magic)");
  Checkpoint ckpt;
  const auto meta_len = r.get<std::uint64_t>();
  try {
    ckpt.metadata = nlohmann::json::parse(r.take(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name(r.take(name_len));
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw LoadError("corrupt checkpoint: implausible rank for '" + name + "'");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::int64_t>();
      if (dim < 0 || dim > (1LL << 31)) throw LoadError("corrupt checkpoint: bad dimension for '" + name + "'");
      shape.push_back(static_cast<int>(dim));
    }
    const std::size_t n = shape_numel(shape);
    auto raw = r.take(n * sizeof(double));
    std::vector<double> values(n);
    std::memcpy(values.data(), raw.data(), raw.size());
    ckpt.arrays.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw LoadError("corrupt checkpoint: trailing bytes");
  return ckpt;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_text_file(path, serialize_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_text_file(path)); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string hash_arrays(const std::map<std::string, Tensor>& arrays) {
  Checkpoint c;
  c.arrays = arrays;
  return sha256_hex(serialize_checkpoint(c));
}

}  // namespace sfm
