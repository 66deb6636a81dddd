#include "sfm/attacks.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <opencv2/imgcodecs.hpp>
#include <random>
#include <sstream>
#include <thread>

#include "sfm/errors.hpp"
#include "sfm/filters.hpp"
#include "sfm/rng.hpp"

extern char** environ;

namespace sfm {

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::Identity: return "Identity";
    case AttackKind::GaussianNoise: return "GaussianNoise";
    case AttackKind::SaltPepper: return "SaltPepper";
    case AttackKind::JPEG: return "JPEG";
    case AttackKind::Contrast: return "Contrast";
    case AttackKind::Brightness: return "Brightness";
    case AttackKind::GaussianFilter: return "GaussianFilter";
    case AttackKind::MeanFilter: return "MeanFilter";
    case AttackKind::MedianFilter: return "MedianFilter";
    case AttackKind::RandomDropout: return "RandomDropout";
    case AttackKind::External: return "External";
  }
  return "?";
}

namespace {

AttackSpec with(AttackKind kind, double value) {
  AttackSpec s;
  s.kind = kind;
  s.value = value;
  s.validate();
  return s;
}

bool is_odd_kernel(double k) { return k >= 3 && k == std::floor(k) && static_cast<long>(k) % 2 == 1; }

std::string fmt_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

AttackSpec AttackSpec::gaussian_noise(double sigma) { return with(AttackKind::GaussianNoise, sigma); }
AttackSpec AttackSpec::salt_pepper(double density) { return with(AttackKind::SaltPepper, density); }
AttackSpec AttackSpec::jpeg(int quality) { return with(AttackKind::JPEG, quality); }
AttackSpec AttackSpec::contrast(double r) { return with(AttackKind::Contrast, r); }
AttackSpec AttackSpec::brightness(double r) { return with(AttackKind::Brightness, r); }
AttackSpec AttackSpec::gaussian_filter(int k) { return with(AttackKind::GaussianFilter, k); }
AttackSpec AttackSpec::mean_filter(int k) { return with(AttackKind::MeanFilter, k); }
AttackSpec AttackSpec::median_filter(int k) { return with(AttackKind::MedianFilter, k); }

AttackSpec AttackSpec::random_dropout(double lo, double hi) {
  AttackSpec s;
  s.kind = AttackKind::RandomDropout;
  s.dropout_min = lo;
  s.dropout_max = hi;
  s.validate();
  return s;
}

AttackSpec AttackSpec::external(std::string command, std::chrono::milliseconds timeout) {
  AttackSpec s;
  s.kind = AttackKind::External;
  s.command = std::move(command);
  s.timeout = timeout;
  s.validate();
  return s;
}

void AttackSpec::validate() const {
  switch (kind) {
    case AttackKind::Identity: break;
    case AttackKind::GaussianNoise:
      if (!(value > 0.0)) throw InvalidArgument("gaussian noise sigma must be > 0");
      break;
    case AttackKind::SaltPepper:
      if (!(value > 0.0 && value < 1.0)) throw InvalidArgument("salt-and-pepper density must be in (0,1)");
      break;
    case AttackKind::JPEG:
      if (!(value >= 1.0 && value <= 100.0) || value != std::floor(value)) {
        throw InvalidArgument("JPEG quality must be an integer in [1,100]");
      }
      break;
    case AttackKind::Contrast:
    case AttackKind::Brightness:
      if (!(value > -1.0 && value < 1.0)) throw InvalidArgument("photometric factor must be in (-1,1)");
      break;
    case AttackKind::GaussianFilter:
    case AttackKind::MeanFilter:
    case AttackKind::MedianFilter:
      if (!is_odd_kernel(value)) throw InvalidArgument("filter kernel must be an odd integer >= 3");
      break;
    case AttackKind::RandomDropout:
      if (!(dropout_min > 0.0 && dropout_max < 1.0 && dropout_min <= dropout_max)) {
        throw InvalidArgument("dropout fraction range must lie inside (0,1)");
      }
      break;
    case AttackKind::External:
      if (timeout.count() <= 0) throw InvalidArgument("external attack timeout must be positive");
      break;
  }
}

bool AttackSpec::stochastic() const {
  return kind == AttackKind::GaussianNoise || kind == AttackKind::SaltPepper || kind == AttackKind::RandomDropout;
}

std::string AttackSpec::label() const {
  switch (kind) {
    case AttackKind::Identity: return "identity";
    case AttackKind::GaussianNoise: return "gn:" + fmt_value(value);
    case AttackKind::SaltPepper: return "sp:" + fmt_value(value);
    case AttackKind::JPEG: return "jpeg:" + fmt_value(value);
    case AttackKind::Contrast: return "contrast:" + fmt_value(value);
    case AttackKind::Brightness: return "brightness:" + fmt_value(value);
    case AttackKind::GaussianFilter: return "gf:" + fmt_value(value);
    case AttackKind::MeanFilter: return "meanf:" + fmt_value(value);
    case AttackKind::MedianFilter: return "medf:" + fmt_value(value);
    case AttackKind::RandomDropout: return "rd:" + fmt_value(dropout_min) + "-" + fmt_value(dropout_max);
    case AttackKind::External: return "external";
  }
  return "?";
}

std::vector<AttackSpec> default_attack_grid() {
  std::vector<AttackSpec> g{AttackSpec::identity()};
  for (double s : {0.1, 0.15, 0.2}) g.push_back(AttackSpec::gaussian_noise(s));
  for (double d : {0.1, 0.15, 0.2}) g.push_back(AttackSpec::salt_pepper(d));
  for (int q : {10, 30, 50, 70}) g.push_back(AttackSpec::jpeg(q));
  for (double r : {0.2, -0.2, 0.4, -0.4}) g.push_back(AttackSpec::contrast(r));
  for (double r : {0.15, -0.15, 0.3, -0.3}) g.push_back(AttackSpec::brightness(r));
  for (int k : {5, 7}) g.push_back(AttackSpec::gaussian_filter(k));
  for (int k : {5, 7}) g.push_back(AttackSpec::mean_filter(k));
  for (int k : {5, 7}) g.push_back(AttackSpec::median_filter(k));
  g.push_back(AttackSpec::random_dropout());
  return g;
}

AttackSpec AttackSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  std::string name = text.substr(0, colon);
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  auto number = [&]() {
    if (arg.empty()) throw InvalidArgument("attack '" + text + "' needs a parameter");
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(arg, &used);
    } catch (const std::exception&) {
      throw InvalidArgument("attack '" + text + "': bad parameter");
    }
    if (used != arg.size()) throw InvalidArgument("attack '" + text + "': bad parameter");
    return v;
  };
  if (name == "identity") return identity();
  if (name == "gn") return gaussian_noise(number());
  if (name == "sp") return salt_pepper(number());
  if (name == "jpeg") return with(AttackKind::JPEG, number());
  if (name == "contrast") return contrast(number());
  if (name == "brightness") return brightness(number());
  if (name == "gf") return with(AttackKind::GaussianFilter, number());
  if (name == "meanf") return with(AttackKind::MeanFilter, number());
  if (name == "medf") return with(AttackKind::MedianFilter, number());
  if (name == "rd") {
    if (arg.empty()) return random_dropout();
    const auto dash = arg.find('-');
    if (dash == std::string::npos) throw InvalidArgument("rd range must be written lo-hi");
    try {
      return random_dropout(std::stod(arg.substr(0, dash)), std::stod(arg.substr(dash + 1)));
    } catch (const std::invalid_argument&) {
      throw InvalidArgument("attack '" + text + "': bad range");
    }
  }
  if (name == "external") {
    AttackSpec s;
    s.kind = AttackKind::External;
    return s;
  }
  throw InvalidArgument("unknown attack '" + text + "'");
}

namespace {

Image jpeg_round_trip(const Image& image, int quality) {
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        row[x][2 - c] = static_cast<unsigned char>(std::lround(std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0));
      }
    }
  }
  std::vector<unsigned char> buf;
  if (!cv::imencode(".jpg", bgr, buf, {cv::IMWRITE_JPEG_QUALITY, quality})) {
    throw std::runtime_error("JPEG encoding failed");
  }
  cv::Mat dec = cv::imdecode(buf, cv::IMREAD_COLOR);
  Image out(3, image.height(), image.width());
  for (int y = 0; y < image.height(); ++y) {
    const auto* row = dec.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = row[x][2 - c] / 255.0;
    }
  }
  return out;
}

Image filter_planes(const Image& image, const std::vector<double>& taps) {
  Image out(image.channels(), image.height(), image.width());
  for (int c = 0; c < image.channels(); ++c) {
    filters::separable_replicate(image.plane(c).data(), out.plane(c).data(), image.height(), image.width(), taps);
  }
  return out;
}

Image random_dropout(const Image& image, const AttackSpec& spec, Rng& rng) {
  const double area = static_cast<double>(image.height()) * image.width();
  const double fraction = std::uniform_real_distribution<double>(spec.dropout_min, spec.dropout_max)(rng);
  const double aspect = std::exp(std::uniform_real_distribution<double>(std::log(0.5), std::log(2.0))(rng));
  int rh = static_cast<int>(std::lround(std::sqrt(fraction * area * aspect)));
  rh = std::clamp(rh, 1, image.height());
  int rw = static_cast<int>(std::lround(fraction * area / rh));
  rw = std::clamp(rw, 1, image.width());
  // Re-balance when the width saturated so the covered area stays in range.
  if (rw == image.width()) rh = std::clamp(static_cast<int>(std::lround(fraction * area / rw)), 1, image.height());
  const int y0 = std::uniform_int_distribution<int>(0, image.height() - rh)(rng);
  const int x0 = std::uniform_int_distribution<int>(0, image.width() - rw)(rng);
  Image out = image;
  for (int c = 0; c < out.channels(); ++c) {
    for (int y = y0; y < y0 + rh; ++y) {
      for (int x = x0; x < x0 + rw; ++x) out.at(c, y, x) = 0.0;
    }
  }
  return out;
}

}  // namespace

Image apply_attack(const Image& image, const AttackSpec& spec) {
  spec.validate();
  if (!image.all_finite()) throw InvalidInput("attack input contains non-finite pixels");
  if (!image.in_unit_range()) throw InvalidArgument("attack input must lie in [0,1]");
  Rng rng(derive_seed(spec.seed.value_or(0), {static_cast<std::uint64_t>(spec.kind)}));
  Image out;
  switch (spec.kind) {
    case AttackKind::Identity: return image;
    case AttackKind::GaussianNoise: {
      out = image;
      std::normal_distribution<double> noise(0.0, spec.value);
      for (auto& v : out.values()) v += noise(rng);
      break;
    }
    case AttackKind::SaltPepper: {
      out = image;
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
          if (u(rng) >= spec.value) continue;
          const double v = u(rng) < 0.5 ? 0.0 : 1.0;
          for (int c = 0; c < image.channels(); ++c) out.at(c, y, x) = v;
        }
      }
      break;
    }
    case AttackKind::JPEG:
      if (image.channels() != 3) throw InvalidArgument("JPEG attack expects RGB");
      out = jpeg_round_trip(image, static_cast<int>(spec.value));
      break;
    case AttackKind::Contrast:
      out = image;
      for (auto& v : out.values()) v = (v - 0.5) * (1.0 + spec.value) + 0.5;
      break;
    case AttackKind::Brightness:
      out = image;
      for (auto& v : out.values()) v *= 1.0 + spec.value;
      break;
    case AttackKind::GaussianFilter:
      out = filter_planes(image, filters::gaussian_kernel(static_cast<int>(spec.value), 0.0));
      break;
    case AttackKind::MeanFilter: {
      const int k = static_cast<int>(spec.value);
      out = filter_planes(image, std::vector<double>(k, 1.0 / k));
      break;
    }
    case AttackKind::MedianFilter:
      out = Image(image.channels(), image.height(), image.width());
      for (int c = 0; c < image.channels(); ++c) {
        filters::median_replicate(image.plane(c).data(), out.plane(c).data(), image.height(), image.width(),
                                  static_cast<int>(spec.value));
      }
      break;
    case AttackKind::RandomDropout: out = random_dropout(image, spec, rng); break;
    case AttackKind::External: out = run_external(image, spec).image; break;
  }
  return clamp01(std::move(out));
}

namespace {

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

std::string shell_quote(const std::string& s) { return "'" + replace_all(s, "'", "'\\''") + "'"; }

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "sfm-ext-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("cannot create temp directory");
    path = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace

ExternalRun run_external(const Image& image, const AttackSpec& spec) {
  using Reason = ExternalAttackError::Reason;
  if (spec.kind != AttackKind::External) throw InvalidArgument("run_external needs an External attack spec");
  if (spec.command.empty()) throw ExternalAttackError(Reason::Unreachable, "no external attack adapter configured");
  spec.validate();

  TempDir dir;
  const auto in_path = dir.path / "input.png";
  const auto out_path = dir.path / "output.png";
  save_png(image, in_path);
  std::string cmd = replace_all(spec.command, "{input}", shell_quote(in_path.string()));
  cmd = replace_all(cmd, "{output}", shell_quote(out_path.string()));

  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(&attr, 0);
  const char* argv[] = {"/bin/sh", "-c", cmd.c_str(), nullptr};
  pid_t pid = 0;
  const auto start = std::chrono::steady_clock::now();
  const int rc = posix_spawn(&pid, "/bin/sh", nullptr, &attr, const_cast<char* const*>(argv), environ);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) throw ExternalAttackError(Reason::Unreachable, "cannot spawn external attack command");

  int status = 0;
  for (;;) {
    const pid_t done = waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    if (done < 0) throw ExternalAttackError(Reason::CommandFailed, "waitpid failed for external attack");
    if (std::chrono::steady_clock::now() - start > spec.timeout) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      throw ExternalAttackError(Reason::Timeout, "external attack timed out after " +
                                                     std::to_string(spec.timeout.count()) + " ms");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);

  if (WIFEXITED(status) && WEXITSTATUS(status) == 127) {
    throw ExternalAttackError(Reason::Unreachable, "external attack command not found: " + spec.command);
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw ExternalAttackError(Reason::CommandFailed, "external attack command failed: " + spec.command);
  }
  if (!std::filesystem::exists(out_path)) {
    throw ExternalAttackError(Reason::MalformedOutput, "external attack produced no output image");
  }
  Image edited;
  try {
    edited = load_image(out_path);
  } catch (const LoadError&) {
    throw ExternalAttackError(Reason::MalformedOutput, "external attack output is not a readable image");
  }
  if (edited.height() != image.height() || edited.width() != image.width()) {
    throw ExternalAttackError(Reason::SizeMismatch, "external attack changed the image size");
  }
  return {std::move(edited), latency, spec.command};
}

}  // namespace sfm
