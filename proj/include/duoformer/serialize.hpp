#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "duoformer/tensor.hpp"

// Binary containers.
//
// DFT1 tensor record:
//   "DFT1" | u8 dtype | u8 rank | rank × u64 extents | row-major payload
// DFC1 named container:
//   "DFC1" | u32 count | count × (u16 name length | UTF-8 name | DFT1 record)
// All integers and payload scalars are little-endian.
namespace duo::io {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2, u8 = 3 };

std::size_t dtype_size(DType dtype);
const char* dtype_name(DType dtype);

struct Record {
  DType dtype = DType::f32;
  std::vector<std::uint64_t> extents;
  std::vector<std::byte> payload;

  std::uint64_t count() const;
  bool operator==(const Record&) const = default;
};

void write_record(std::ostream& out, const Record& record);
Record read_record(std::istream& in);

struct Container {
  std::vector<std::pair<std::string, Record>> entries;

  const Record* find(const std::string& name) const;
  const Record& at(const std::string& name) const;
  void put(std::string name, Record record);
  bool operator==(const Container&) const = default;
};

void write_container(std::ostream& out, const Container& container);
Container read_container(std::istream& in);

void save_record(const std::filesystem::path& path, const Record& record);
Record load_record(const std::filesystem::path& path);
void save_container(const std::filesystem::path& path, const Container& container);
Container load_container(const std::filesystem::path& path);

// Conversions. to_tensor accepts f32 or f64 payloads and converts to Scalar.
template <typename Scalar>
Record to_record(const Tensor<Scalar>& tensor);
template <typename Scalar>
Tensor<Scalar> to_tensor(const Record& record);

Record from_i64(const std::vector<std::uint64_t>& extents, const std::vector<std::int64_t>& values);
std::vector<std::int64_t> to_i64(const Record& record);
Record from_text(const std::string& text);
std::string to_text(const Record& record);

}  // namespace duo::io
