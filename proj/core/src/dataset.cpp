#include "synthplankton/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include <spdlog/spdlog.h>

#include "synthplankton/error.hpp"
#include "synthplankton/rng.hpp"

namespace synthplankton {

namespace fs = std::filesystem;

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".tif" || ext == ".tiff" || ext == ".jpg" || ext == ".jpeg";
}

void check_crop(const ImageSet& set, Resolution size) {
  if (size.height < 1 || size.width < 1) throw Error("crop size must be positive");
  const auto src = set.resolution();
  if (size.height > src.height || size.width > src.width)
    throw Error("crop exceeds image: " + size.str() + " from " + src.str());
}

ImageRecord crop(const ImageRecord& src, CropOrigin origin, Resolution size) {
  ImageRecord out;
  out.source_path = src.source_path;
  out.resolution = size;
  out.flipped = src.flipped;
  out.crop_origin = {src.crop_origin.row + origin.row, src.crop_origin.col + origin.col};
  out.pixels.resize(size.pixel_count() * 3);
  const std::size_t row_len = static_cast<std::size_t>(size.width) * 3;
  for (int r = 0; r < size.height; ++r) {
    const float* from = &src.pixels[(static_cast<std::size_t>(origin.row + r) * src.resolution.width + origin.col) * 3];
    std::copy(from, from + row_len, &out.pixels[r * row_len]);
  }
  return out;
}

}  // namespace

ImageSet load_image_dir(const fs::path& dir, const ResolutionPolicy& policy) {
  if (!fs::is_directory(dir)) throw Error("no images found: " + dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(fs::relative(entry.path(), dir));
  }
  if (files.empty()) throw Error("no images found in " + dir.string());
  std::sort(files.begin(), files.end());

  std::vector<ImageRecord> records;
  records.reserve(files.size());
  for (const auto& rel : files) {
    ImageRecord r = read_image(dir / rel);
    if (policy.resize) r = resize_area(r, *policy.resize);
    r.source_path = rel.generic_string();
    records.push_back(std::move(r));
  }
  return ImageSet(std::move(records));
}

ImageSet center_crop(const ImageSet& set, Resolution size) {
  check_crop(set, size);
  const auto src = set.resolution();
  // Floor division puts the odd extra pixel in the bottom/right margin.
  const CropOrigin origin{(src.height - size.height) / 2, (src.width - size.width) / 2};
  std::vector<ImageRecord> out;
  out.reserve(set.size());
  for (const auto& r : set.records()) out.push_back(crop(r, origin, size));
  return ImageSet(std::move(out), set.manifest_seed());
}

ImageSet random_crop_expand(const ImageSet& set, Resolution size, int count, std::uint64_t seed) {
  if (count < 1) throw Error("random crop count must be >= 1");
  check_crop(set, size);
  const auto src = set.resolution();
  const int rows = src.height - size.height + 1;
  const int cols = src.width - size.width + 1;
  if (static_cast<long long>(rows) * cols < count)
    throw Error("crop count exceeds distinct offsets: " + std::to_string(count) + " > " +
                std::to_string(static_cast<long long>(rows) * cols));

  std::vector<ImageRecord> out;
  out.reserve(set.size() * static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < set.size(); ++i) {
    Rng rng(derive_seed(seed, {i}));
    std::uniform_int_distribution<int> pick_row(0, rows - 1);
    std::uniform_int_distribution<int> pick_col(0, cols - 1);
    std::set<std::pair<int, int>> used;
    while (static_cast<int>(used.size()) < count) {
      CropOrigin o{pick_row(rng), pick_col(rng)};
      if (!used.insert({o.row, o.col}).second) continue;
      out.push_back(crop(set[i], o, size));
    }
  }
  return ImageSet(std::move(out), seed);
}

ImageSet hflip_augment(const ImageSet& set) {
  std::vector<ImageRecord> out;
  out.reserve(set.size() * 2);
  for (const auto& r : set.records()) {
    out.push_back(r);
    ImageRecord m = r;
    m.flipped = !r.flipped;
    const int w = r.resolution.width;
    for (int row = 0; row < r.resolution.height; ++row)
      for (int col = 0; col < w; ++col)
        for (int ch = 0; ch < 3; ++ch) m.at(row, col, ch) = r.at(row, w - 1 - col, ch);
    out.push_back(std::move(m));
  }
  return ImageSet(std::move(out), set.manifest_seed());
}

ImageSet resize_set(const ImageSet& set, Resolution target) {
  std::vector<ImageRecord> out;
  out.reserve(set.size());
  for (const auto& r : set.records()) out.push_back(resize_area(r, target));
  return ImageSet(std::move(out), set.manifest_seed());
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, {0x5348u}));
  // Explicit Fisher-Yates: std::shuffle's draw sequence is library-specific.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  auto order = shuffled_indices(n, seed);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    auto end = std::min(n, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

BatchStream::BatchStream(const ImageSet& set, int batch_size, std::uint64_t seed) : set_(&set) {
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (static_cast<std::size_t>(batch_size) > set.size()) {
    spdlog::warn("batch size {} exceeds dataset size {}; using one batch", batch_size, set.size());
    batch_size = static_cast<int>(std::max<std::size_t>(set.size(), 1));
  }
  batches_ = epoch_batches(set.size(), batch_size, seed);
}

std::optional<PixelBatch> BatchStream::next() {
  if (cursor_ >= batches_.size()) return std::nullopt;
  return to_batch(*set_, batches_[cursor_++], false);
}

BatchStream iterate_batches(const ImageSet& set, int batch_size, std::uint64_t seed) {
  return BatchStream(set, batch_size, seed);
}

HoldoutSplit split_holdout(const ImageSet& set, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) throw Error("holdout fraction must be in [0,1)");
  const std::size_t n = set.size();
  std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n >= 2) k = std::clamp<std::size_t>(k, 1, n - 1);
  auto order = shuffled_indices(n, derive_seed(seed, {0x484fu}));
  std::vector<std::size_t> hold(order.begin(), order.begin() + k);
  std::vector<std::size_t> train(order.begin() + k, order.end());
  std::sort(hold.begin(), hold.end());
  std::sort(train.begin(), train.end());
  return {set.select(train), set.select(hold)};
}

void save_dataset(const ImageSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  auto manifest = set.manifest();
  for (std::size_t i = 0; i < set.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "record_%06zu.png", i);
    write_png(dir / name, set[i]);
    manifest["records"][i]["file"] = name;
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

ImageSet make_toy_data(std::size_t count, Resolution resolution, std::uint64_t seed) {
  if (resolution.height < 4 || resolution.width < 4) throw Error("toy data resolution too small");
  std::vector<ImageRecord> out;
  out.reserve(count);
  const double scale = std::min(resolution.height, resolution.width);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, {i, 0x746fu}));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageRecord r;
    char name[32];
    std::snprintf(name, sizeof(name), "toy_%06zu.png", i);
    r.source_path = name;
    r.resolution = resolution;
    r.pixels.resize(resolution.pixel_count() * 3);

    const double bg[3] = {0.80 + 0.1 * u(rng), 0.85 + 0.1 * u(rng), 0.75 + 0.1 * u(rng)};
    struct Shape {
      double cy, cx, radius, thickness;
      bool ring;
      double color[3];
    };
    std::vector<Shape> shapes(1 + static_cast<int>(u(rng) * 3.0));
    for (auto& s : shapes) {
      s.cy = u(rng) * resolution.height;
      s.cx = u(rng) * resolution.width;
      s.radius = scale * (0.08 + 0.14 * u(rng));
      s.ring = u(rng) < 0.4;
      s.thickness = std::max(1.0, s.radius * 0.35);
      const bool greenish = u(rng) < 0.5;
      s.color[0] = greenish ? 0.15 + 0.2 * u(rng) : 0.45 + 0.2 * u(rng);
      s.color[1] = greenish ? 0.45 + 0.25 * u(rng) : 0.30 + 0.15 * u(rng);
      s.color[2] = greenish ? 0.15 + 0.15 * u(rng) : 0.10 + 0.15 * u(rng);
    }
    for (int row = 0; row < resolution.height; ++row) {
      for (int col = 0; col < resolution.width; ++col) {
        double px[3] = {bg[0], bg[1], bg[2]};
        for (const auto& s : shapes) {
          const double d = std::hypot(row + 0.5 - s.cy, col + 0.5 - s.cx);
          double alpha = s.ring ? std::exp(-std::pow((d - s.radius) / s.thickness, 2.0))
                                : std::exp(-0.5 * std::pow(d / s.radius, 2.0) * 2.0);
          for (int ch = 0; ch < 3; ++ch) px[ch] = (1.0 - alpha) * px[ch] + alpha * s.color[ch];
        }
        for (int ch = 0; ch < 3; ++ch) r.at(row, col, ch) = static_cast<float>(std::clamp(px[ch], 0.0, 1.0));
      }
    }
    out.push_back(std::move(r));
  }
  return ImageSet(std::move(out), seed);
}

}  // namespace synthplankton
