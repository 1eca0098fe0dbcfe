#include "dsar/wire.hpp"

#include <bit>
#include <cstring>

#include "dsar/errors.hpp"

namespace dsar::wire {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

void Writer::u32(std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
}

void Writer::u64(std::uint64_t v) {
  for (int s = 0; s < 64; s += 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
}

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::f64s(std::span<const double> values) {
  buf_.reserve(buf_.size() + values.size() * 8);
  for (double v : values) f64(v);
}

void Reader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n)
    throw ProtocolError("payload truncated: need " + std::to_string(n) +
                        " bytes, have " + std::to_string(bytes_.size() - pos_));
}

std::uint8_t Reader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int s = 0; s < 32; s += 8) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << s;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int s = 0; s < 64; s += 8) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << s;
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

Eigen::VectorXd Reader::vector(Eigen::Index n) {
  if (n < 0) throw ProtocolError("negative vector length in payload");
  need(static_cast<std::size_t>(n) * 8);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = f64();
  return v;
}

Eigen::MatrixXd Reader::matrix(Eigen::Index rows, Eigen::Index cols) {
  if (rows < 0 || cols < 0) throw ProtocolError("negative matrix shape in payload");
  need(static_cast<std::size_t>(rows * cols) * 8);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
  return m;
}

void Reader::expect_end() const {
  if (pos_ != bytes_.size())
    throw ProtocolError(std::to_string(bytes_.size() - pos_) +
                        " trailing bytes in payload");
}

void expect_tag(Reader& r, std::uint32_t tag, const std::string& what) {
  if (r.u32() != tag) throw ProtocolError("payload is not a " + what);
}

}  // namespace dsar::wire
