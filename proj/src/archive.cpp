#include "attnflow/archive.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include <openssl/evp.h>

#include "attnflow/error.hpp"

namespace attnflow {

namespace {

constexpr char kMagic[8] = {'A', 'T', 'T', 'N', 'F', 'L', 'O', 'W'};
constexpr std::size_t kDigestBytes = 32;

std::array<std::uint8_t, kDigestBytes> sha256(std::span<const std::uint8_t> bytes) {
  std::array<std::uint8_t, kDigestBytes> out{};
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr);
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (auto b : bytes) os << std::setw(2) << static_cast<int>(b);
  return os.str();
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_string32(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void put_raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw IoError("corrupt archive " + source_ + ": truncated at byte " +
                    std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const TensorBlock* Archive::find(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

void Archive::add(const Param& p) { blocks.push_back({p.name, p.shape, p.value}); }

void Archive::add(TensorBlock block) { blocks.push_back(std::move(block)); }

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  Writer w;
  w.put_raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(archive.version);
  w.put_string32(archive.kind);
  const std::string meta = archive.meta.dump();
  w.put<std::uint64_t>(meta.size());
  w.put_raw(meta.data(), meta.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(archive.blocks.size()));
  for (const auto& b : archive.blocks) {
    w.put_string32(b.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) w.put<std::uint64_t>(d);
    w.put<std::uint64_t>(b.values.size());
    w.put_raw(b.values.data(), b.values.size() * sizeof(Real));
  }
  const auto digest = sha256(w.bytes());
  w.put_raw(digest.data(), digest.size());

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write archive " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing archive " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + kDigestBytes ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("corrupt archive " + path.string() + ": bad magic");
  }
  const std::span<const std::uint8_t> body(bytes.data(), bytes.size() - kDigestBytes);
  const auto digest = sha256(body);
  if (std::memcmp(digest.data(), bytes.data() + body.size(), kDigestBytes) != 0) {
    throw IoError("corrupt archive " + path.string() + ": digest mismatch");
  }

  Reader r(body, path.string());
  r.get_string(sizeof(kMagic));
  Archive a;
  a.version = r.get<std::uint32_t>();
  if (a.version > kArchiveFormatVersion) {
    throw ConfigError("archive " + path.string() + " has format version " +
                      std::to_string(a.version) + "; this build reads up to version " +
                      std::to_string(kArchiveFormatVersion));
  }
  a.kind = r.get_string(r.get<std::uint32_t>());
  const std::string meta = r.get_string(r.get<std::uint64_t>());
  try {
    a.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt archive " + path.string() + ": " + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  a.blocks.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorBlock b;
    b.name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    std::size_t expected = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      b.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      expected *= b.shape.back();
    }
    const auto n = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (n != expected) {
      throw IoError("corrupt archive " + path.string() + ": block '" + b.name +
                    "' size does not match its shape");
    }
    b.values.resize(n);
    r.get_raw(b.values.data(), n * sizeof(Real));
    a.blocks.push_back(std::move(b));
  }
  if (!r.done()) throw IoError("corrupt archive " + path.string() + ": trailing bytes");
  return a;
}

void restore_param(const Archive& archive, Param& p) {
  const TensorBlock* b = archive.find(p.name);
  if (!b) {
    throw ConfigError("archive of kind '" + archive.kind + "' is missing parameter '" +
                      p.name + "'");
  }
  if (b->values.size() != p.value.size() || b->shape != p.shape) {
    throw ConfigError("parameter '" + p.name + "' has a different shape in the archive");
  }
  p.value = b->values;
  p.zero_grad();
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  const auto d = sha256(bytes);
  return to_hex(d);
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

std::string params_digest(const ConstParamList& params) {
  Writer w;
  for (const Param* p : params) {
    w.put_string32(p->name);
    for (auto d : p->shape) w.put<std::uint64_t>(d);
    w.put_raw(p->value.data(), p->value.size() * sizeof(Real));
  }
  return sha256_hex(w.bytes());
}

}  // namespace attnflow
