#include "test_data.hpp"

#include <unistd.h>

#include <cmath>
#include <fmt/format.h>

namespace sfm::fixtures {

namespace fs = std::filesystem;

const std::vector<Image>& natural_sources() {
  static const std::vector<Image> sources = [] {
    std::vector<Image> out;
    for (const auto& p : list_images(SFM_TEST_DATA_DIR "/natural")) out.push_back(load_image(p));
    return out;
  }();
  return sources;
}

std::vector<Image> natural_crops(std::size_t count, int size, std::uint64_t seed) {
  const auto& sources = natural_sources();
  std::vector<Image> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const Image& src = sources[k % sources.size()];
    Rng rng = make_rng(seed, {k});
    const int max_side = std::min(src.height(), src.width());
    const int min_side = std::min(max_side, std::max(size, max_side / 4));
    const int side = std::uniform_int_distribution<int>(min_side, max_side)(rng);
    const int y0 = std::uniform_int_distribution<int>(0, src.height() - side)(rng);
    const int x0 = std::uniform_int_distribution<int>(0, src.width() - side)(rng);
    Image crop(3, side, side);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) crop.at(c, y, x) = src.at(c, y0 + y, x0 + x);
    out.push_back(quantize8(resize_bilinear(crop, size, size)));
  }
  return out;
}

std::vector<DatasetItem> natural_dataset(std::size_t count, int size, std::uint64_t seed) {
  std::vector<DatasetItem> items;
  auto crops = natural_crops(count, size, seed);
  for (std::size_t i = 0; i < crops.size(); ++i) items.push_back({fmt::format("crop_{:04}.png", i), std::move(crops[i])});
  return items;
}

Image random_image(int channels, int height, int width, Rng& rng) {
  Image img(channels, height, width);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : img.values()) v = u(rng);
  return img;
}

Image smooth_image(int height, int width, Rng& rng) {
  Image img(3, height, width);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int c = 0; c < 3; ++c) {
    const double base = 0.3 + 0.4 * u(rng);
    const double fy = 1.0 + 2.0 * u(rng), fx = 1.0 + 2.0 * u(rng), ph = 6.28 * u(rng);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        img.at(c, y, x) = base + 0.2 * std::cos(6.283185307179586 * (fy * y / height + fx * x / width) + ph);
      }
  }
  return img;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / fmt::format("sfm_test_{}_{}", name, ::getpid());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_dataset(const fs::path& dir, const std::vector<Image>& images) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i) save_png(images[i], dir / fmt::format("img_{:04}.png", i));
}

}  // namespace sfm::fixtures
