#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dsar::wire {

/// Appends values in canonical little-endian, fixed-width form. Matrices are
/// written column-major without shape headers; callers write shapes
/// explicitly so sizes are fully determined by the payload schema.
class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v);
  void f64s(std::span<const double> values);
  void vector(const Eigen::VectorXd& v) { f64s({v.data(), static_cast<std::size_t>(v.size())}); }
  void matrix(const Eigen::MatrixXd& m) { f64s({m.data(), static_cast<std::size_t>(m.size())}); }

  std::size_t size() const { return buf_.size(); }
  std::vector<std::uint8_t> take() && { return std::move(buf_); }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64();
  Eigen::VectorXd vector(Eigen::Index n);
  Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols);

  /// Throws ProtocolError unless every byte has been consumed.
  void expect_end() const;
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

/// Checks a four-character payload tag.
void expect_tag(Reader& r, std::uint32_t tag, const std::string& what);

constexpr std::uint32_t make_tag(char a, char b, char c, char d) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(a)) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b)) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(c)) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(d)) << 24);
}

}  // namespace dsar::wire
