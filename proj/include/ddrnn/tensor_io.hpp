#ifndef DDRNN_TENSOR_IO_HPP
#define DDRNN_TENSOR_IO_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ddrnn {

/// On-disk layout of a DDRT file, all integers little-endian:
///
///   "DDRT" | version u32 = 1 | dtype u8 | rank u32 | dims u32 x rank | payload
///
/// The payload is the row-major element sequence, each element stored
/// little-endian in its dtype width.
enum class DType : std::uint8_t { F32 = 0, F64 = 1, U8 = 2 };

inline constexpr std::uint32_t kTensorVersion = 1;

std::size_t dtype_size(DType t);

/// A tensor held as its little-endian payload bytes, which makes save/load
/// bit-exact for every dtype.
struct Tensor {
  DType dtype = DType::F32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  std::size_t element_count() const;

  static Tensor from_f32(std::span<const float> values, std::vector<std::uint32_t> dims);
  static Tensor from_f64(std::span<const double> values, std::vector<std::uint32_t> dims);
  static Tensor from_u8(std::span<const std::uint8_t> values, std::vector<std::uint32_t> dims);

  /// Typed views; throw FormatError on a dtype mismatch.
  std::vector<float> to_f32() const;
  std::vector<double> to_f64() const;
  std::vector<std::uint8_t> to_u8() const;

  bool operator==(const Tensor&) const = default;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
/// Validates magic, version, dtype, rank, dims and payload length.
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace ddrnn

#endif  // DDRNN_TENSOR_IO_HPP
