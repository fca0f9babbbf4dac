#include "cropsim/synth/style.hpp"

#include <cmath>
#include <random>

#include <opencv2/imgproc.hpp>

namespace cropsim::synth {

cv::Mat pseudo_real_style(const cv::Mat& bgr, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  cv::Mat img;
  bgr.convertTo(img, CV_32FC3, 1.0 / 255.0);

  // Warm white balance drift and reduced saturation.
  const cv::Vec3f gain(static_cast<float>(0.70 + 0.12 * u(rng)),
                       static_cast<float>(0.92 + 0.10 * u(rng)),
                       static_cast<float>(1.05 + 0.15 * u(rng)));
  const float sat = static_cast<float>(0.55 + 0.25 * u(rng));
  const float gamma = static_cast<float>(0.75 + 0.2 * u(rng));

  // Low-frequency illumination field: a tilted gradient times a vignette.
  const double gx = (u(rng) - 0.5) * 0.6, gy = (u(rng) - 0.5) * 0.6;
  const double cx = img.cols * (0.3 + 0.4 * u(rng)), cy = img.rows * (0.3 + 0.4 * u(rng));
  const double r2max = static_cast<double>(img.cols) * img.cols;

  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x) {
      cv::Vec3f& p = img.at<cv::Vec3f>(y, x);
      const float grey = (p[0] + p[1] + p[2]) / 3.f;
      for (int c = 0; c < 3; ++c) p[c] = grey + sat * (p[c] - grey);
      const double dx = x - cx, dy = y - cy;
      const double light = (1.0 + gx * (x / static_cast<double>(img.cols) - 0.5) +
                            gy * (y / static_cast<double>(img.rows) - 0.5)) *
                           (1.0 - 0.45 * (dx * dx + dy * dy) / r2max);
      for (int c = 0; c < 3; ++c)
        p[c] = std::pow(std::max(0.f, p[c] * gain[c]), gamma) * static_cast<float>(light);
    }
  }

  const double sigma = 0.8 + 0.8 * u(rng);
  cv::GaussianBlur(img, img, cv::Size(0, 0), sigma);

  std::normal_distribution<float> noise(0.f, static_cast<float>((4.0 + 5.0 * u(rng)) / 255.0));
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x)
      for (int c = 0; c < 3; ++c) img.at<cv::Vec3f>(y, x)[c] += noise(rng);

  cv::Mat out;
  img.convertTo(out, CV_8UC3, 255.0);
  return out;
}

}  // namespace cropsim::synth
