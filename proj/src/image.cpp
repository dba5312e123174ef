#include "attnflow/image.hpp"

#include <cmath>
#include <cstring>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "attnflow/error.hpp"

namespace attnflow {

namespace {

constexpr Real kMean[3] = {0.485, 0.456, 0.406};
constexpr Real kStd[3] = {0.229, 0.224, 0.225};

cv::Mat as_mat(const RgbImage& image) {
  return cv::Mat(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3,
                 const_cast<std::uint8_t*>(image.pixels.data()));
}

RgbImage from_mat(const cv::Mat& mat) {
  cv::Mat continuous = mat.isContinuous() ? mat : mat.clone();
  RgbImage out(static_cast<std::size_t>(continuous.cols),
               static_cast<std::size_t>(continuous.rows));
  std::memcpy(out.pixels.data(), continuous.data, out.pixels.size());
  return out;
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw InputError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return from_mat(rgb);
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  cv::Mat bgr;
  cv::cvtColor(as_mat(image), bgr, cv::COLOR_RGB2BGR);
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr, params);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

bool is_readable_image(const std::filesystem::path& path) {
  try {
    return cv::haveImageReader(path.string());
  } catch (const cv::Exception&) {
    return false;
  }
}

RgbImage resize_bilinear(const RgbImage& image, std::size_t width, std::size_t height) {
  if (image.width == width && image.height == height) return image;
  cv::Mat out;
  cv::resize(as_mat(image), out, cv::Size(static_cast<int>(width), static_cast<int>(height)),
             0, 0, cv::INTER_LINEAR);
  return from_mat(out);
}

RgbImage rotate(const RgbImage& image, double degrees) {
  double turn = std::fmod(degrees, 360.0);
  if (turn < 0) turn += 360.0;
  if (turn == 0.0) return image;
  const cv::Mat src = as_mat(image);
  cv::Mat out;
  if (image.width == image.height && std::fmod(turn, 90.0) == 0.0) {
    const int quarter = static_cast<int>(turn / 90.0);
    const int code = quarter == 1   ? cv::ROTATE_90_COUNTERCLOCKWISE
                     : quarter == 2 ? cv::ROTATE_180
                                    : cv::ROTATE_90_CLOCKWISE;
    cv::rotate(src, out, code);
    return from_mat(out);
  }
  const cv::Point2f centre(static_cast<float>(image.width - 1) / 2.0f,
                           static_cast<float>(image.height - 1) / 2.0f);
  const cv::Mat m = cv::getRotationMatrix2D(centre, turn, 1.0);
  cv::warpAffine(src, out, m, src.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  return from_mat(out);
}

FeatureMap to_normalized_tensor(const RgbImage& image) {
  FeatureMap out(3, image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(c, y, x) = (image.at(y, x, c) / 255.0 - kMean[c]) / kStd[c];
      }
    }
  }
  return out;
}

std::vector<FeatureMap> preprocess(const RgbImage& image, const std::vector<int>& scales) {
  if (image.empty()) throw InputError("preprocess: empty image");
  std::vector<FeatureMap> out;
  out.reserve(scales.size());
  for (int s : scales) {
    if (s <= 0) throw ConfigError("preprocess: scale must be positive");
    const auto side = static_cast<std::size_t>(s);
    out.push_back(to_normalized_tensor(resize_bilinear(image, side, side)));
  }
  return out;
}

}  // namespace attnflow
