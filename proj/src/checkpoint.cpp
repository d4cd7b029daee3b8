#include "pspg/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace pspg {

namespace {

template <typename T>
void put(std::string& out, T value) {
  for (std::size_t b = 0; b < sizeof(T); ++b)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * b)) & 0xFF));
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
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
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == end_; }
  std::size_t remaining() const { return end_ - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (end_ - pos_ < n)
      throw CheckpointError("checkpoint: truncated " + std::string(what) + " at offset " +
                            std::to_string(pos_));
  }

  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamList& params) {
  std::set<std::string> names;
  std::string out = "PSPG";
  put<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& [name, t] : params) {
    if (!names.insert(name).second) throw CheckpointError("checkpoint: duplicate name " + name);
    if (name.size() > 0xFFFF) throw CheckpointError("checkpoint: name too long");
    if (t.rank() > 0xFF) throw CheckpointError("checkpoint: rank too large for " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) {
      if (t.dtype() == Dtype::kF32)
        put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      else
        put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  put<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

ParamList decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "PSPG") != 0)
    throw CheckpointError("checkpoint: missing PSPG magic");
  const std::size_t body = bytes.size() - 4;
  Reader crc_reader(bytes, bytes.size());
  (void)crc_reader.take(body, "body");
  const auto stored = crc_reader.get<std::uint32_t>("crc");
  if (stored != crc_of(bytes.data(), body)) throw CheckpointError("checkpoint: CRC32 mismatch");

  Reader in(bytes, body);
  (void)in.take(4, "magic");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));

  ParamList out;
  std::set<std::string> names;
  while (!in.done()) {
    const std::size_t at = in.pos();
    const auto len = in.get<std::uint16_t>("name length");
    std::string name = in.take(len, "name");
    if (!names.insert(name).second) throw CheckpointError("checkpoint: duplicate name " + name);
    const auto dtype = in.get<std::uint8_t>("dtype");
    if (dtype > 1)
      throw CheckpointError("checkpoint: bad dtype " + std::to_string(dtype) + " at offset " +
                            std::to_string(at));
    const auto rank = in.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>("dims"));
    const std::size_t width = dtype == 0 ? 4 : 8;
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d != 0 && n > in.remaining() / width / d)
        throw CheckpointError("checkpoint: payload of " + name + " exceeds the file");
      n *= d;
    }
    std::vector<double> values(n);
    for (auto& v : values) {
      if (dtype == 0)
        v = std::bit_cast<float>(in.get<std::uint32_t>("payload"));
      else
        v = std::bit_cast<double>(in.get<std::uint64_t>("payload"));
    }
    DtypeGuard guard(static_cast<Dtype>(dtype));
    out.push_back({std::move(name), Tensor::from(shape, std::move(values))});
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  const std::string bytes = encode_checkpoint(params);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path.string());
}

ParamList read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return decode_checkpoint(s.str());
}

ParamList with_prefix(const ParamList& params, const std::string& prefix) {
  ParamList out;
  for (const auto& p : params)
    if (p.name.compare(0, prefix.size(), prefix) == 0) out.push_back(p);
  return out;
}

bool params_identical(const ParamList& a, const ParamList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Tensor &x = a[i].tensor, &y = b[i].tensor;
    if (a[i].name != b[i].name || x.shape() != y.shape() || x.dtype() != y.dtype()) return false;
    if (std::memcmp(x.data().data(), y.data().data(), x.numel() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace pspg
