#include "changer/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

namespace changer {

namespace {

constexpr char kMagic[] = "CHANGER-CKPT 1\n";
constexpr char kHeaderEnd[] = "---\n";

template <class UInt>
void put_le(std::string& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

class Reader {
public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <class UInt>
  UInt get_le() {
    need(sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      v |= static_cast<UInt>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(UInt);
    return v;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool starts_with(const std::string& prefix) const { return bytes_.compare(0, prefix.size(), prefix) == 0; }
  std::size_t find(const std::string& needle, std::size_t from) const { return bytes_.find(needle, from); }
  void seek(std::size_t p) { pos_ = p; }
  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& bytes() const { return bytes_; }

private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

} // namespace

void save_checkpoint(const std::string& path, const std::string& header, const Parameters& params) {
  if (header.find(kHeaderEnd) != std::string::npos) {
    throw CheckpointError("checkpoint header may not contain the terminator line");
  }
  std::string out = kMagic;
  out += header;
  if (!header.empty() && header.back() != '\n') out.push_back('\n');
  out += kHeaderEnd;
  put_le<std::uint64_t>(out, params.size());
  for (const ParamEntry& e : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    const Shape& s = e.value.shape();
    put_le<std::uint32_t>(out, 4);
    for (int d : {s.n, s.c, s.h, s.w}) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (std::size_t i = 0; i < e.value.numel(); ++i) {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(e.value[i]));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
  if (!r.starts_with(kMagic)) throw CheckpointError(path + ": bad checkpoint magic");
  const std::size_t magic_len = sizeof(kMagic) - 1;
  // the magic's own newline doubles as the line start for an empty header
  const std::size_t term = r.find(std::string("\n") + kHeaderEnd, magic_len - 1);
  if (term == std::string::npos) throw CheckpointError(path + ": header terminator missing");
  Checkpoint ckpt;
  ckpt.header = r.bytes().substr(magic_len, term + 1 - magic_len);
  r.seek(term + 1 + sizeof(kHeaderEnd) - 1);
  const auto count = r.get_le<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor nt;
    nt.name = r.get_bytes(r.get_le<std::uint32_t>());
    const auto rank = r.get_le<std::uint32_t>();
    if (rank != 4) throw CheckpointError(path + ": entry " + nt.name + " has unsupported rank " + std::to_string(rank));
    std::array<int, 4> dims{};
    for (auto& d : dims) {
      const auto v = r.get_le<std::uint64_t>();
      if (v > (1u << 30)) throw CheckpointError(path + ": implausible dimension in " + nt.name);
      d = static_cast<int>(v);
    }
    nt.value = Tensor4(Shape{dims[0], dims[1], dims[2], dims[3]});
    for (std::size_t i = 0; i < nt.value.numel(); ++i) {
      nt.value[i] = std::bit_cast<double>(r.get_le<std::uint64_t>());
    }
    ckpt.entries.push_back(std::move(nt));
  }
  if (!r.at_end()) throw CheckpointError(path + ": trailing bytes after last entry");
  return ckpt;
}

void restore_parameters(const Checkpoint& ckpt, Parameters& params) {
  if (ckpt.entries.size() != params.size()) {
    throw ShapeError("checkpoint has " + std::to_string(ckpt.entries.size()) + " entries, model expects " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& e = ckpt.entries[i];
    ParamEntry& p = params[i];
    if (e.name != p.name) throw ShapeError("checkpoint entry " + e.name + " where model expects " + p.name);
    if (!(e.value.shape() == p.value.shape())) {
      throw ShapeError("checkpoint entry " + e.name + " has shape " + e.value.shape().str() + ", model expects " +
                       p.value.shape().str());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].value = ckpt.entries[i].value;
  }
}

} // namespace changer
