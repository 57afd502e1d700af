#include "synthplankton/image.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "synthplankton/error.hpp"

namespace synthplankton {

std::string Resolution::str() const {
  return std::to_string(height) + "x" + std::to_string(width);
}

Resolution Resolution::parse(const std::string& text) {
  auto x = text.find_first_of("xX");
  if (x == std::string::npos) throw Error("invalid resolution '" + text + "', expected HxW");
  Resolution r;
  auto parse_int = [&](std::string_view s, int& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && out > 0;
  };
  std::string_view view(text);
  if (!parse_int(view.substr(0, x), r.height) || !parse_int(view.substr(x + 1), r.width))
    throw Error("invalid resolution '" + text + "', expected HxW");
  return r;
}

ImageSet::ImageSet(std::vector<ImageRecord> records, std::uint64_t manifest_seed)
    : records_(std::move(records)), manifest_seed_(manifest_seed) {
  if (!records_.empty()) resolution_ = records_.front().resolution;
  for (const auto& r : records_) {
    if (r.resolution != resolution_)
      throw Error("inconsistent resolutions: " + r.source_path + " is " + r.resolution.str() +
                  ", expected " + resolution_.str());
    if (r.pixels.size() != r.resolution.pixel_count() * 3)
      throw Error("image buffer size mismatch for " + r.source_path);
  }
}

ImageSet ImageSet::select(std::span<const std::size_t> indices) const {
  std::vector<ImageRecord> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(records_.at(i));
  return ImageSet(std::move(out), manifest_seed_);
}

nlohmann::json ImageSet::manifest() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records_) {
    recs.push_back({{"source_path", r.source_path},
                    {"crop_origin", {r.crop_origin.row, r.crop_origin.col}},
                    {"flipped", r.flipped},
                    {"seed", manifest_seed_}});
  }
  return {{"seed", manifest_seed_}, {"resolution", resolution_.str()}, {"records", std::move(recs)}};
}

PixelBatch to_batch(const ImageSet& set, std::span<const std::size_t> indices, bool signed_range) {
  PixelBatch b;
  b.batch = static_cast<int>(indices.size());
  b.resolution = set.resolution();
  b.data.resize(b.image_size() * indices.size());
  auto out = b.data.begin();
  for (auto i : indices) {
    for (float v : set[i].pixels) *out++ = signed_range ? 2.0 * v - 1.0 : static_cast<double>(v);
  }
  return b;
}

PixelBatch to_batch(const ImageSet& set, bool signed_range) {
  std::vector<std::size_t> all(set.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return to_batch(set, all, signed_range);
}

ImageSet from_signed_batch(const PixelBatch& batch, const std::string& name_prefix) {
  std::vector<ImageRecord> out;
  out.reserve(batch.batch);
  for (int b = 0; b < batch.batch; ++b) {
    ImageRecord r;
    char name[32];
    std::snprintf(name, sizeof(name), "_%04d", b);
    r.source_path = name_prefix + name;
    r.resolution = batch.resolution;
    auto img = batch.image(b);
    r.pixels.resize(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
      r.pixels[i] = static_cast<float>(std::clamp((img[i] + 1.0) * 0.5, 0.0, 1.0));
    out.push_back(std::move(r));
  }
  return ImageSet(std::move(out));
}

namespace {

cv::Mat to_mat(const ImageRecord& image) {
  cv::Mat m(image.resolution.height, image.resolution.width, CV_32FC3);
  std::copy(image.pixels.begin(), image.pixels.end(), m.ptr<float>());
  return m;
}

ImageRecord from_mat(const cv::Mat& m, const ImageRecord& meta) {
  ImageRecord r = meta;
  r.resolution = {m.rows, m.cols};
  cv::Mat cont = m.isContinuous() ? m : m.clone();
  r.pixels.assign(cont.ptr<float>(), cont.ptr<float>() + static_cast<std::size_t>(m.rows) * m.cols * 3);
  for (auto& v : r.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return r;
}

}  // namespace

ImageRecord read_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
  if (raw.empty()) throw Error("cannot decode image: " + path.string());

  double scale = 1.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F:
    case CV_64F: scale = 1.0; break;
    default: throw Error("unsupported pixel depth in " + path.string());
  }
  cv::Mat f;
  raw.convertTo(f, CV_32F, scale);

  cv::Mat rgb;
  switch (f.channels()) {
    case 1: cv::cvtColor(f, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(f, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(f, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw Error("unsupported channel count in " + path.string());
  }

  ImageRecord meta;
  meta.source_path = path.string();
  return from_mat(rgb, meta);
}

void write_png(const std::filesystem::path& path, const ImageRecord& image) {
  cv::Mat rgb = to_mat(image);
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  cv::Mat bytes;
  bgr.convertTo(bytes, CV_8U, 255.0);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bytes)) throw Error("cannot write image: " + path.string());
}

ImageRecord resize_area(const ImageRecord& image, Resolution target) {
  if (image.resolution == target) return image;
  cv::Mat out;
  cv::resize(to_mat(image), out, cv::Size(target.width, target.height), 0, 0, cv::INTER_AREA);
  return from_mat(out, image);
}

ImageRecord make_grid(std::span<const ImageRecord* const> images, int columns, int padding, float background) {
  if (images.empty() || columns < 1) throw Error("make_grid: nothing to tile");
  const Resolution cell = images.front()->resolution;
  const int n = static_cast<int>(images.size());
  const int rows = (n + columns - 1) / columns;
  ImageRecord grid;
  grid.source_path = "grid";
  grid.resolution = {rows * cell.height + (rows + 1) * padding, columns * cell.width + (columns + 1) * padding};
  grid.pixels.assign(grid.resolution.pixel_count() * 3, background);
  for (int i = 0; i < n; ++i) {
    if (images[i] == nullptr) continue;
    const ImageRecord& img = *images[i];
    if (img.resolution != cell) throw Error("make_grid: inconsistent resolutions");
    const int r0 = padding + (i / columns) * (cell.height + padding);
    const int c0 = padding + (i % columns) * (cell.width + padding);
    for (int r = 0; r < cell.height; ++r)
      for (int c = 0; c < cell.width; ++c)
        for (int ch = 0; ch < 3; ++ch) grid.at(r0 + r, c0 + c, ch) = img.at(r, c, ch);
  }
  return grid;
}

void draw_border(ImageRecord& image, int thickness, float r, float g, float b) {
  const float rgb[3] = {r, g, b};
  const auto [h, w] = image.resolution;
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      bool edge = row < thickness || col < thickness || row >= h - thickness || col >= w - thickness;
      if (!edge) continue;
      for (int ch = 0; ch < 3; ++ch) image.at(row, col, ch) = rgb[ch];
    }
  }
}

}  // namespace synthplankton
