#include <bit>
#include <cstring>
#include <limits>

#include "fairmtl/error.hpp"
#include "fairmtl/io.hpp"
#include "fairmtl/nnet.hpp"

namespace fairmtl::nnet {
namespace {

constexpr char kMagic[4] = {'F', 'R', 'L', 'T'};

template <typename T>
void PutLe(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T Le() {
    Need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view Bytes(std::size_t n) {
    Need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool AtEnd() const { return pos_ == bytes_.size(); }

 private:
  void Need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::kCorruptCheckpoint, "checkpoint truncated at byte " + std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string SerializeCheckpoint(const ModelParams& params) {
  std::string out(kMagic, sizeof(kMagic));
  PutLe<std::uint32_t>(out, kCheckpointVersion);
  PutLe<std::uint32_t>(out, params.epoch);
  PutLe<std::uint64_t>(out, params.rng_seed);
  PutLe<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [name, tensor] : params.tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max() || tensor.shape.size() > 255) {
      throw Error(ErrorCode::kInvalidInput, "tensor " + name + " cannot be encoded");
    }
    PutLe<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(tensor.shape.size()));
    for (std::size_t d : tensor.shape) PutLe<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : tensor.data) PutLe<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ModelParams DeserializeCheckpoint(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < sizeof(kMagic) || std::memcmp(in.Bytes(sizeof(kMagic)).data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kCorruptCheckpoint, "bad magic");
  }
  const auto version = in.Le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "checkpoint version " + std::to_string(version));
  }
  ModelParams params;
  params.epoch = in.Le<std::uint32_t>();
  params.rng_seed = in.Le<std::uint64_t>();
  const auto count = in.Le<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor nt;
    const auto name_len = in.Le<std::uint16_t>();
    nt.name = std::string(in.Bytes(name_len));
    const auto rank = in.Le<std::uint8_t>();
    std::size_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      nt.tensor.shape.push_back(in.Le<std::uint32_t>());
      n *= nt.tensor.shape.back();
    }
    if (n > bytes.size() / 8) {
      throw Error(ErrorCode::kCorruptCheckpoint, "tensor " + nt.name + " larger than the file");
    }
    nt.tensor.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) nt.tensor.data[i] = std::bit_cast<double>(in.Le<std::uint64_t>());
    params.tensors.push_back(std::move(nt));
  }
  if (!in.AtEnd()) throw Error(ErrorCode::kCorruptCheckpoint, "trailing bytes after last tensor");
  return params;
}

void SaveCheckpoint(const ModelParams& params, const std::filesystem::path& path) {
  io::WriteFileAtomic(path, SerializeCheckpoint(params));
}

ModelParams LoadCheckpoint(const std::filesystem::path& path) {
  return DeserializeCheckpoint(io::ReadFile(path));
}

}  // namespace fairmtl::nnet
