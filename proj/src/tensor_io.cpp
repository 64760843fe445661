#include "ddrnn/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "ddrnn/errors.hpp"

namespace ddrnn {

namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'D', 'R', 'T'};
constexpr std::uint32_t kMaxRank = 16;

template <class U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <class U>
U get_le(const std::uint8_t* p) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return value;
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("DDRT file truncated in ") + what);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t product(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (std::uint32_t d : dims) {
    if (__builtin_mul_overflow(n, static_cast<std::size_t>(d), &n)) throw FormatError("tensor dims overflow");
  }
  return n;
}

void require(const Tensor& t, DType want) {
  if (t.dtype != want) throw FormatError("tensor dtype mismatch");
}

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
  }
  throw FormatError("unknown dtype");
}

std::size_t Tensor::element_count() const { return product(dims); }

Tensor Tensor::from_f32(std::span<const float> values, std::vector<std::uint32_t> dims) {
  Tensor t{DType::F32, std::move(dims), {}};
  if (t.element_count() != values.size()) throw FormatError("tensor dims do not match value count");
  t.payload.reserve(values.size() * 4);
  for (float v : values) put_le(t.payload, std::bit_cast<std::uint32_t>(v));
  return t;
}

Tensor Tensor::from_f64(std::span<const double> values, std::vector<std::uint32_t> dims) {
  Tensor t{DType::F64, std::move(dims), {}};
  if (t.element_count() != values.size()) throw FormatError("tensor dims do not match value count");
  t.payload.reserve(values.size() * 8);
  for (double v : values) put_le(t.payload, std::bit_cast<std::uint64_t>(v));
  return t;
}

Tensor Tensor::from_u8(std::span<const std::uint8_t> values, std::vector<std::uint32_t> dims) {
  Tensor t{DType::U8, std::move(dims), {values.begin(), values.end()}};
  if (t.element_count() != values.size()) throw FormatError("tensor dims do not match value count");
  return t;
}

std::vector<float> Tensor::to_f32() const {
  require(*this, DType::F32);
  std::vector<float> out(element_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(get_le<std::uint32_t>(&payload[4 * i]));
  return out;
}

std::vector<double> Tensor::to_f64() const {
  require(*this, DType::F64);
  std::vector<double> out(element_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<double>(get_le<std::uint64_t>(&payload[8 * i]));
  return out;
}

std::vector<std::uint8_t> Tensor::to_u8() const {
  require(*this, DType::U8);
  return payload;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.payload.size() != t.element_count() * dtype_size(t.dtype)) {
    throw FormatError("tensor payload length does not match its dims");
  }
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le(out, kTensorVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype));
  put_le(out, static_cast<std::uint32_t>(t.dims.size()));
  for (std::uint32_t d : t.dims) put_le(out, d);
  out.insert(out.end(), t.payload.begin(), t.payload.end());
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4, "magic"), kMagic, 4) != 0) throw FormatError("not a DDRT file (bad magic)");
  const auto version = get_le<std::uint32_t>(r.take(4, "version"));
  if (version != kTensorVersion) throw FormatError("unsupported DDRT version " + std::to_string(version));
  const std::uint8_t code = *r.take(1, "dtype");
  if (code > static_cast<std::uint8_t>(DType::U8)) throw FormatError("unknown DDRT dtype " + std::to_string(code));
  Tensor t;
  t.dtype = static_cast<DType>(code);
  const auto rank = get_le<std::uint32_t>(r.take(4, "rank"));
  if (rank > kMaxRank) throw FormatError("DDRT rank " + std::to_string(rank) + " is implausible");
  for (std::uint32_t i = 0; i < rank; ++i) t.dims.push_back(get_le<std::uint32_t>(r.take(4, "dims")));
  const std::size_t want = t.element_count() * dtype_size(t.dtype);
  if (r.remaining() != want) {
    throw FormatError("DDRT payload is " + std::to_string(r.remaining()) + " bytes, dims require " +
                      std::to_string(want));
  }
  const std::uint8_t* p = r.take(want, "payload");
  t.payload.assign(p, p + want);
  return t;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_bytes(path, encode_tensor(t)); }

Tensor load_tensor(const std::filesystem::path& path) { return decode_tensor(read_file_bytes(path)); }

}  // namespace ddrnn
