#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "synthplankton/image.hpp"

namespace synthplankton {

/// How load_image_dir treats source resolutions: keep them (and require they
/// agree) or area-resize every file to a fixed size.
struct ResolutionPolicy {
  std::optional<Resolution> resize;

  static ResolutionPolicy native() { return {}; }
  static ResolutionPolicy resize_to(Resolution r) { return {r}; }
};

/// Loads every PNG/TIFF/JPEG under `dir` (recursively), sorted by relative
/// path. source_path is the path relative to `dir`, which keeps duplicate
/// file names in different subdirectories distinct.
ImageSet load_image_dir(const std::filesystem::path& dir, const ResolutionPolicy& policy = ResolutionPolicy::native());

/// Centered window; odd remainders put the extra pixel on the bottom/right.
ImageSet center_crop(const ImageSet& set, Resolution size);

/// `count` crops per source image at distinct offsets drawn uniformly from the
/// valid range. Output order is source-major: all crops of image 0 first.
ImageSet random_crop_expand(const ImageSet& set, Resolution size, int count, std::uint64_t seed);

/// Every input record followed by its left-right mirror.
ImageSet hflip_augment(const ImageSet& set);

/// Area-averaging resize of every record.
ImageSet resize_set(const ImageSet& set, Resolution target);

/// Seeded permutation of [0, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

/// Splits an epoch's seeded permutation into consecutive batches; the last
/// batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, std::uint64_t seed);

/// One pass over a set in seeded shuffled order, yielding [0,1] batches.
class BatchStream {
 public:
  BatchStream(const ImageSet& set, int batch_size, std::uint64_t seed);

  std::optional<PixelBatch> next();
  const std::vector<std::vector<std::size_t>>& batches() const { return batches_; }

 private:
  const ImageSet* set_;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t cursor_ = 0;
};

/// Equivalent to constructing a BatchStream; batch_size > |set| yields one
/// batch holding the whole set and logs a warning.
BatchStream iterate_batches(const ImageSet& set, int batch_size, std::uint64_t seed);

struct HoldoutSplit {
  ImageSet train;
  ImageSet holdout;
};

/// Seeded split; holdout gets round(fraction * n) records (at least one when
/// n >= 2 and fraction > 0).
HoldoutSplit split_holdout(const ImageSet& set, double fraction, std::uint64_t seed);

/// Writes record_%06d.png files plus manifest.json.
void save_dataset(const ImageSet& set, const std::filesystem::path& dir);

/// Seeded synthetic microscopy-like images: pale background with a few
/// colored blobs and rings.
ImageSet make_toy_data(std::size_t count, Resolution resolution, std::uint64_t seed);

}  // namespace synthplankton
