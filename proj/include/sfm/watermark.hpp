#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfm/rng.hpp"
#include "sfm/tensor.hpp"

namespace sfm {

// Fixed-length binary message. Text form is lowercase hex, most significant
// bit first; lengths that are not a multiple of four use the bitstring form.
class WatermarkBits {
 public:
  WatermarkBits() = default;
  explicit WatermarkBits(std::vector<std::uint8_t> bits);

  static WatermarkBits random(int length, Rng& rng);
  static WatermarkBits from_hex(const std::string& hex, int length);
  static WatermarkBits from_bitstring(const std::string& bits);
  // Accepts either a hex string (length/4 digits) or a bitstring of `length` characters.
  static WatermarkBits parse(const std::string& text, int length);

  int length() const noexcept { return static_cast<int>(bits_.size()); }
  std::uint8_t operator[](int i) const { return bits_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  // Each bit mapped to bit - 0.5.
  std::vector<double> normalized() const;
  std::string to_hex() const;
  std::string to_bitstring() const;

  bool operator==(const WatermarkBits&) const = default;

 private:
  std::vector<std::uint8_t> bits_;
};

// Rows of normalised bits, shape [N, L].
Tensor normalized_batch(const std::vector<WatermarkBits>& batch);
// Rows of {0,1} targets, shape [N, L].
Tensor target_batch(const std::vector<WatermarkBits>& batch);

// 100 * matching / L.
double bit_accuracy(const WatermarkBits& a, const WatermarkBits& b);

}  // namespace sfm
