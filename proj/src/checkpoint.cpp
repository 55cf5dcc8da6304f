#include "gmx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace gmx {

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(pos_, std::string("truncated checkpoint reading ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out = "GMNT";
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw Error(Errc::InvalidConfig, "tensor name too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
    for (auto d : tensor.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != "GMNT") throw FormatError(0, "bad checkpoint magic");
  const std::size_t version_at = in.offset();
  if (auto version = in.get<std::uint32_t>("version"); version != kCheckpointVersion) {
    throw FormatError(version_at, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = in.get<std::uint16_t>("name length");
    std::string name = in.take(name_len, "name");
    const std::size_t rank_at = in.offset();
    const auto rank = in.get<std::uint8_t>("rank");
    if (rank == 0) throw FormatError(rank_at, "tensor '" + name + "' has rank 0");
    Shape shape;
    for (std::uint8_t r = 0; r < rank; ++r) {
      const std::size_t dim_at = in.offset();
      const auto d = in.get<std::uint32_t>("dimension");
      if (d == 0) throw FormatError(dim_at, "tensor '" + name + "' has a zero dimension");
      shape.push_back(d);
    }
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = std::bit_cast<double>(in.get<std::uint64_t>("tensor data"));
    tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw FormatError(in.offset(), "trailing bytes after last tensor");
  return tensors;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(Errc::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << file.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(Errc::Io, "cannot write " + path.string());
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw Error(Errc::Io, "short write to " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  write_file_bytes(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace gmx
