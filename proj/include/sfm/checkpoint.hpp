#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "sfm/tensor.hpp"

namespace sfm {

// Container of named double arrays plus JSON metadata.
//
// Layout (little-endian): "SFMCKPT1", u64 metadata byte count, metadata JSON
// (keys sorted), u64 array count, then per array in name order: u32 name
// length, name bytes, u32 rank, rank x i64 dims, f64 values.
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Tensor> arrays;

  // Arrays whose name starts with `prefix`, with the prefix stripped.
  std::map<std::string, Tensor> with_prefix(const std::string& prefix) const;
  void insert(const std::string& prefix, const std::map<std::string, Tensor>& arrays);
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

// Writes through a temporary file and rename, so readers never see a torn file.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
// Hash of the arrays' names, shapes and values.
std::string hash_arrays(const std::map<std::string, Tensor>& arrays);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace sfm
