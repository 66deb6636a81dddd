#include "sfm/watermark.hpp"

#include <cctype>

#include "sfm/errors.hpp"

namespace sfm {

WatermarkBits::WatermarkBits(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw InvalidArgument("watermark bits must be 0 or 1");
  }
}

WatermarkBits WatermarkBits::random(int length, Rng& rng) {
  if (length <= 0) throw InvalidArgument("watermark length must be positive");
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(length));
  for (auto& b : bits) b = static_cast<std::uint8_t>(rng() >> 63);
  return WatermarkBits(std::move(bits));
}

WatermarkBits WatermarkBits::from_hex(const std::string& hex, int length) {
  if (length <= 0 || length % 4 != 0) throw InvalidArgument("hex messages need a length divisible by 4");
  if (static_cast<int>(hex.size()) * 4 != length) {
    throw InvalidArgument("hex message has " + std::to_string(hex.size() * 4) + " bits, expected " +
                          std::to_string(length));
  }
  std::vector<std::uint8_t> bits;
  bits.reserve(static_cast<std::size_t>(length));
  for (char ch : hex) {
    if (!std::isxdigit(static_cast<unsigned char>(ch))) throw InvalidArgument("invalid hex digit in message");
    const int v = std::stoi(std::string(1, ch), nullptr, 16);
    for (int k = 3; k >= 0; --k) bits.push_back(static_cast<std::uint8_t>((v >> k) & 1));
  }
  return WatermarkBits(std::move(bits));
}

WatermarkBits WatermarkBits::from_bitstring(const std::string& text) {
  std::vector<std::uint8_t> bits;
  bits.reserve(text.size());
  for (char ch : text) {
    if (ch != '0' && ch != '1') throw InvalidArgument("bitstring may only contain '0' and '1'");
    bits.push_back(static_cast<std::uint8_t>(ch - '0'));
  }
  if (bits.empty()) throw InvalidArgument("empty bitstring");
  return WatermarkBits(std::move(bits));
}

WatermarkBits WatermarkBits::parse(const std::string& text, int length) {
  if (static_cast<int>(text.size()) == length &&
      text.find_first_not_of("01") == std::string::npos) {
    return from_bitstring(text);
  }
  return from_hex(text, length);
}

std::vector<double> WatermarkBits::normalized() const {
  std::vector<double> out(bits_.size());
  for (std::size_t i = 0; i < bits_.size(); ++i) out[i] = static_cast<double>(bits_[i]) - 0.5;
  return out;
}

std::string WatermarkBits::to_hex() const {
  if (bits_.size() % 4 != 0) return to_bitstring();
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < bits_.size(); i += 4) {
    const int v = (bits_[i] << 3) | (bits_[i + 1] << 2) | (bits_[i + 2] << 1) | bits_[i + 3];
    out.push_back(kDigits[v]);
  }
  return out;
}

std::string WatermarkBits::to_bitstring() const {
  std::string out;
  for (auto b : bits_) out.push_back(static_cast<char>('0' + b));
  return out;
}

namespace {

Tensor rows(const std::vector<WatermarkBits>& batch, double offset) {
  if (batch.empty()) throw InvalidArgument("empty watermark batch");
  const int length = batch.front().length();
  Tensor t({static_cast<int>(batch.size()), length});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    if (batch[n].length() != length) throw InvalidArgument("watermark batch has mixed lengths");
    for (int i = 0; i < length; ++i) t[n * length + i] = batch[n][i] - offset;
  }
  return t;
}

}  // namespace

Tensor normalized_batch(const std::vector<WatermarkBits>& batch) { return rows(batch, 0.5); }
Tensor target_batch(const std::vector<WatermarkBits>& batch) { return rows(batch, 0.0); }

double bit_accuracy(const WatermarkBits& a, const WatermarkBits& b) {
  if (a.length() != b.length()) throw InvalidArgument("bit_accuracy: length mismatch");
  if (a.length() == 0) throw InvalidArgument("bit_accuracy: empty messages");
  int same = 0;
  for (int i = 0; i < a.length(); ++i) same += a[i] == b[i];
  return 100.0 * same / a.length();
}

}  // namespace sfm
