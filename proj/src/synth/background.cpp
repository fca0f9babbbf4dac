#include "cropsim/synth/background.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cropsim/error.hpp"

namespace cropsim::synth {
namespace {

// Sum of bilinearly upsampled white-noise octaves, roughly in [-1, 1].
cv::Mat fractal_noise(std::mt19937_64& rng, int size, int octaves) {
  std::normal_distribution<float> n(0.f, 1.f);
  cv::Mat acc = cv::Mat::zeros(size, size, CV_32F);
  float amp = 1.f, total = 0.f;
  for (int o = 0; o < octaves; ++o) {
    const int cells = 4 << o;
    cv::Mat small(cells, cells, CV_32F);
    for (int i = 0; i < small.rows; ++i)
      for (int j = 0; j < small.cols; ++j) small.at<float>(i, j) = n(rng);
    cv::Mat up;
    cv::resize(small, up, cv::Size(size, size), 0, 0, cv::INTER_CUBIC);
    acc += up * amp;
    total += amp;
    amp *= 0.55f;
  }
  return acc / total;
}

}  // namespace

cv::Mat procedural_background(std::uint64_t seed, SoilStyle style, int size) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  const bool wet = style == SoilStyle::wet;
  // BGR base colors.
  const cv::Vec3f base = wet ? cv::Vec3f(38 + 10 * u(rng), 52 + 12 * u(rng), 70 + 15 * u(rng))
                             : cv::Vec3f(95 + 20 * u(rng), 130 + 20 * u(rng), 160 + 20 * u(rng));
  const float contrast = wet ? 22.f : 30.f;

  cv::Mat noise = fractal_noise(rng, size, 5);
  // Furrow shading at a random orientation.
  const double ang = u(rng) * std::numbers::pi;
  const double freq = 2 * std::numbers::pi / (18 + 30 * u(rng));
  cv::Mat img(size, size, CV_32FC3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double furrow = std::sin((x * std::cos(ang) + y * std::sin(ang)) * freq);
      const float v = noise.at<float>(y, x) * contrast + static_cast<float>(furrow) * 8.f;
      img.at<cv::Vec3f>(y, x) = base + cv::Vec3f(v, v, v);
    }
  }

  // Pebbles and clods.
  std::uniform_int_distribution<int> pos(0, size - 1);
  const int pebbles = 25 + static_cast<int>(u(rng) * 40);
  for (int i = 0; i < pebbles; ++i) {
    const float shade = static_cast<float>((u(rng) - 0.4) * (wet ? 40 : 70));
    const cv::Scalar c(base[0] + shade, base[1] + shade, base[2] + shade);
    cv::ellipse(img, cv::Point(pos(rng), pos(rng)),
                cv::Size(1 + static_cast<int>(u(rng) * 4), 1 + static_cast<int>(u(rng) * 3)),
                u(rng) * 180, 0, 360, c, cv::FILLED, cv::LINE_AA);
  }
  // Straw residue on wet soil.
  if (wet) {
    const int straws = 20 + static_cast<int>(u(rng) * 30);
    for (int i = 0; i < straws; ++i) {
      const cv::Point a(pos(rng), pos(rng));
      const double t = u(rng) * 2 * std::numbers::pi;
      const double len = 6 + u(rng) * 18;
      const cv::Point b(a.x + static_cast<int>(len * std::cos(t)),
                        a.y + static_cast<int>(len * std::sin(t)));
      cv::line(img, a, b, cv::Scalar(90, 150, 175), 1, cv::LINE_AA);
    }
  }

  cv::Mat out;
  img.convertTo(out, CV_8UC3);
  return out;
}

std::vector<cv::Mat> load_backgrounds(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw IoError(fmt::format("background directory {} does not exist", dir.string()));
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg"))
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<cv::Mat> out;
  for (const auto& f : files) {
    cv::Mat m = cv::imread(f.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw IoError(fmt::format("cannot read background {}", f.string()));
    out.push_back(std::move(m));
  }
  if (out.empty())
    throw ValidationError(fmt::format("no background images in {}", dir.string()));
  return out;
}

}  // namespace cropsim::synth
