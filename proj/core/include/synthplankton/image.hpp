#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace synthplankton {

struct Resolution {
  int height = 0;
  int width = 0;

  bool operator==(const Resolution&) const = default;
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  /// "HxW", e.g. "1024x1024".
  std::string str() const;
  static Resolution parse(const std::string& text);
};

struct CropOrigin {
  int row = 0;
  int col = 0;
  bool operator==(const CropOrigin&) const = default;
};

/// One RGB image, stored row-major HWC with intensities in [0,1].
struct ImageRecord {
  std::string source_path;
  Resolution resolution;
  std::vector<float> pixels;
  CropOrigin crop_origin;
  bool flipped = false;

  float at(int row, int col, int channel) const {
    return pixels[(static_cast<std::size_t>(row) * resolution.width + col) * 3 + channel];
  }
  float& at(int row, int col, int channel) {
    return pixels[(static_cast<std::size_t>(row) * resolution.width + col) * 3 + channel];
  }
};

/// Ordered, immutable collection of equally sized images plus the seed that
/// produced its manifest.
class ImageSet {
 public:
  ImageSet() = default;
  /// Throws "inconsistent resolutions" if records disagree in size.
  explicit ImageSet(std::vector<ImageRecord> records, std::uint64_t manifest_seed = 0);

  const std::vector<ImageRecord>& records() const { return records_; }
  const ImageRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  Resolution resolution() const { return resolution_; }
  std::uint64_t manifest_seed() const { return manifest_seed_; }

  /// Subset in the given order (indices may repeat).
  ImageSet select(std::span<const std::size_t> indices) const;

  /// {"seed", "resolution", "records": [{source_path, crop_origin, flipped, seed}]}
  nlohmann::json manifest() const;

 private:
  std::vector<ImageRecord> records_;
  Resolution resolution_;
  std::uint64_t manifest_seed_ = 0;
};

/// Dense B x H x W x 3 batch of doubles. Range is whatever the producer
/// declares: datasets hand out [0,1], generators emit [-1,1].
struct PixelBatch {
  int batch = 0;
  Resolution resolution;
  std::vector<double> data;

  std::size_t image_size() const { return resolution.pixel_count() * 3; }
  double at(int b, int row, int col, int channel) const {
    return data[static_cast<std::size_t>(b) * image_size() +
                (static_cast<std::size_t>(row) * resolution.width + col) * 3 + channel];
  }
  std::span<const double> image(int b) const {
    return {data.data() + static_cast<std::size_t>(b) * image_size(), image_size()};
  }
};

/// Stacks records into a batch, optionally mapping [0,1] to [-1,1].
PixelBatch to_batch(const ImageSet& set, std::span<const std::size_t> indices, bool signed_range);
PixelBatch to_batch(const ImageSet& set, bool signed_range);

/// Converts a [-1,1] generator batch to [0,1] records named "<prefix>_%04d".
ImageSet from_signed_batch(const PixelBatch& batch, const std::string& name_prefix);

/// Decodes PNG/TIFF/JPEG (8/16-bit, gray/RGB/RGBA) into an RGB record.
/// Throws naming the file when decoding fails.
ImageRecord read_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const ImageRecord& image);

/// Area-averaging resize (identity when sizes match).
ImageRecord resize_area(const ImageRecord& image, Resolution target);

/// Tiles images into a grid with `padding` pixels of `background` between
/// cells. Missing cells stay background.
ImageRecord make_grid(std::span<const ImageRecord* const> images, int columns, int padding = 2,
                      float background = 1.0f);

/// Paints a solid frame of `thickness` pixels in the given RGB color.
void draw_border(ImageRecord& image, int thickness, float r, float g, float b);

}  // namespace synthplankton
