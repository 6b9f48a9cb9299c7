#include "duoformer/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace duo::io {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace {

constexpr char kTensorMagic[4] = {'D', 'F', 'T', '1'};
constexpr char kContainerMagic[4] = {'D', 'F', 'C', '1'};
// Upper bound on a single payload; guards against corrupted extents.
constexpr std::uint64_t kMaxPayload = std::uint64_t{1} << 34;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError(std::string("truncated input while reading ") + what);
  return value;
}

void expect_magic(std::istream& in, const char (&magic)[4]) {
  char got[4] = {};
  in.read(got, 4);
  if (!in || std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string("missing magic bytes ") + std::string(magic, 4));
  }
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::i64: return 8;
    case DType::u8: return 1;
  }
  throw FormatError("unknown dtype");
}

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::i64: return "i64";
    case DType::u8: return "u8";
  }
  return "?";
}

std::uint64_t Record::count() const {
  std::uint64_t n = 1;
  for (auto e : extents) n *= e;
  return n;
}

void write_record(std::ostream& out, const Record& record) {
  if (record.payload.size() != record.count() * dtype_size(record.dtype)) {
    throw FormatError("record payload size does not match its extents");
  }
  if (record.extents.size() > 255) throw FormatError("record rank exceeds 255");
  out.write(kTensorMagic, 4);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(record.dtype));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(record.extents.size()));
  for (auto e : record.extents) put<std::uint64_t>(out, e);
  out.write(reinterpret_cast<const char*>(record.payload.data()),
            static_cast<std::streamsize>(record.payload.size()));
}

Record read_record(std::istream& in) {
  expect_magic(in, kTensorMagic);
  Record r;
  const auto code = get<std::uint8_t>(in, "dtype");
  if (code > 3) throw FormatError("unknown dtype code " + std::to_string(code));
  r.dtype = static_cast<DType>(code);
  const auto rank = get<std::uint8_t>(in, "rank");
  r.extents.resize(rank);
  std::uint64_t count = 1;
  for (auto& e : r.extents) {
    e = get<std::uint64_t>(in, "extent");
    if (e != 0 && count > kMaxPayload / e) throw FormatError("tensor extents overflow");
    count *= e;
  }
  const std::uint64_t bytes = count * dtype_size(r.dtype);
  if (bytes > kMaxPayload) throw FormatError("tensor payload too large");
  r.payload.resize(bytes);
  in.read(reinterpret_cast<char*>(r.payload.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw FormatError("truncated tensor payload");
  return r;
}

const Record* Container::find(const std::string& name) const {
  for (const auto& [n, r] : entries) {
    if (n == name) return &r;
  }
  return nullptr;
}

const Record& Container::at(const std::string& name) const {
  const Record* r = find(name);
  if (!r) throw FormatError("container has no entry '" + name + "'");
  return *r;
}

void Container::put(std::string name, Record record) {
  for (auto& [n, r] : entries) {
    if (n == name) {
      r = std::move(record);
      return;
    }
  }
  entries.emplace_back(std::move(name), std::move(record));
}

void write_container(std::ostream& out, const Container& container) {
  out.write(kContainerMagic, 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(container.entries.size()));
  for (const auto& [name, record] : container.entries) {
    if (name.size() > 0xffff) throw FormatError("entry name too long: " + name.substr(0, 32));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_record(out, record);
  }
}

Container read_container(std::istream& in) {
  expect_magic(in, kContainerMagic);
  Container c;
  const auto count = get<std::uint32_t>(in, "entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint16_t>(in, "name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw FormatError("truncated entry name");
    try {
      c.entries.emplace_back(name, read_record(in));
    } catch (const FormatError& e) {
      throw FormatError("entry '" + name + "': " + e.what());
    }
  }
  return c;
}

void save_record(const std::filesystem::path& path, const Record& record) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_record(out, record);
  if (!out) throw FormatError("write failed: " + path.string());
}

Record load_record(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return read_record(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_container(const std::filesystem::path& path, const Container& container) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_container(out, container);
  if (!out) throw FormatError("write failed: " + path.string());
}

Container load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return read_container(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename Scalar>
Record to_record(const Tensor<Scalar>& tensor) {
  Record r;
  r.dtype = std::is_same_v<Scalar, float> ? DType::f32 : DType::f64;
  r.extents.assign(tensor.shape().begin(), tensor.shape().end());
  r.payload.resize(static_cast<std::size_t>(tensor.numel()) * sizeof(Scalar));
  std::memcpy(r.payload.data(), tensor.data().data(), r.payload.size());
  return r;
}

template <typename Scalar>
Tensor<Scalar> to_tensor(const Record& record) {
  Shape shape(record.extents.begin(), record.extents.end());
  const auto n = static_cast<Index>(record.count());
  Buffer<Scalar> data(n);
  if (record.dtype == DType::f32) {
    Eigen::Array<float, Eigen::Dynamic, 1> raw(n);
    std::memcpy(raw.data(), record.payload.data(), record.payload.size());
    data = raw.template cast<Scalar>();
  } else if (record.dtype == DType::f64) {
    Eigen::Array<double, Eigen::Dynamic, 1> raw(n);
    std::memcpy(raw.data(), record.payload.data(), record.payload.size());
    data = raw.template cast<Scalar>();
  } else {
    throw FormatError(std::string("expected a floating-point tensor, got ") +
                      dtype_name(record.dtype));
  }
  return Tensor<Scalar>(std::move(shape), std::move(data));
}

template Record to_record(const Tensor<float>&);
template Record to_record(const Tensor<double>&);
template Tensor<float> to_tensor<float>(const Record&);
template Tensor<double> to_tensor<double>(const Record&);

Record from_i64(const std::vector<std::uint64_t>& extents, const std::vector<std::int64_t>& values) {
  Record r;
  r.dtype = DType::i64;
  r.extents = extents;
  if (r.count() != values.size()) throw FormatError("i64 values do not fill extents");
  r.payload.resize(values.size() * 8);
  std::memcpy(r.payload.data(), values.data(), r.payload.size());
  return r;
}

std::vector<std::int64_t> to_i64(const Record& record) {
  if (record.dtype != DType::i64) {
    throw FormatError(std::string("expected an i64 tensor, got ") + dtype_name(record.dtype));
  }
  std::vector<std::int64_t> values(record.count());
  std::memcpy(values.data(), record.payload.data(), record.payload.size());
  return values;
}

Record from_text(const std::string& text) {
  Record r;
  r.dtype = DType::u8;
  r.extents = {text.size()};
  r.payload.resize(text.size());
  std::memcpy(r.payload.data(), text.data(), text.size());
  return r;
}

std::string to_text(const Record& record) {
  if (record.dtype != DType::u8) throw FormatError("expected a u8 text entry");
  return std::string(reinterpret_cast<const char*>(record.payload.data()), record.payload.size());
}

}  // namespace duo::io
