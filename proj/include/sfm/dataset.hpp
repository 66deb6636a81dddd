#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sfm/image.hpp"

namespace sfm {

struct DatasetItem {
  std::string id;  // path relative to the dataset root
  Image image;
};

// Recursively collects PNG/JPEG/BMP/TIFF files under `root` in sorted path
// order and resizes each to size x size with bilinear interpolation.
// `limit` = 0 loads everything.
std::vector<DatasetItem> load_dataset(const std::filesystem::path& root, int size, std::size_t limit = 0);

std::vector<std::filesystem::path> list_images(const std::filesystem::path& root);

}  // namespace sfm
