#include "sfm/dataset.hpp"

#include <algorithm>

#include "sfm/errors.hpp"

namespace sfm {

std::vector<std::filesystem::path> list_images(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw LoadError("dataset directory not found: " + root.string());
  static const std::vector<std::string> kExt{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (std::find(kExt.begin(), kExt.end(), ext) != kExt.end()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<DatasetItem> load_dataset(const std::filesystem::path& root, int size, std::size_t limit) {
  if (size < 8) throw InvalidArgument("dataset image size must be at least 8");
  auto files = list_images(root);
  if (limit > 0 && files.size() > limit) files.resize(limit);
  std::vector<DatasetItem> items;
  items.reserve(files.size());
  for (const auto& f : files) {
    items.push_back({std::filesystem::relative(f, root).generic_string(), resize_bilinear(load_image(f), size, size)});
  }
  return items;
}

}  // namespace sfm
