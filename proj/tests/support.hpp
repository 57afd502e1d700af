#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

#include "synthplankton/architectures.hpp"
#include "synthplankton/autograd.hpp"
#include "synthplankton/image.hpp"
#include "synthplankton/rng.hpp"

namespace sp_test {

using namespace synthplankton;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("synthplankton_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline ImageRecord solid(Resolution r, float v, const std::string& name = "solid") {
  ImageRecord rec;
  rec.source_path = name;
  rec.resolution = r;
  rec.pixels.assign(r.pixel_count() * 3, v);
  return rec;
}

inline ImageRecord noise_image(Resolution r, std::uint64_t seed, const std::string& name = "noise") {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageRecord rec = solid(r, 0.0f, name);
  for (auto& p : rec.pixels) p = u(rng);
  return rec;
}

/// Image whose every pixel encodes its (row, col) so crops and flips are
/// traceable.
inline ImageRecord coordinate_image(Resolution r, const std::string& name) {
  ImageRecord rec = solid(r, 0.0f, name);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) {
      rec.at(y, x, 0) = static_cast<float>(y) / static_cast<float>(r.height);
      rec.at(y, x, 1) = static_cast<float>(x) / static_cast<float>(r.width);
      rec.at(y, x, 2) = 0.5f;
    }
  return rec;
}

struct GradCheck {
  double max_rel_error = 0.0;
  int checked = 0;
  std::string worst;
};

/// Compares analytic gradients of L = sum(w * forward()) against central
/// differences on `samples` randomly chosen trainable scalars.
inline GradCheck grad_check(ParameterSet& params, const std::function<Var(ParamBinder&)>& forward,
                            std::uint64_t seed, int samples = 10, double h = 1e-5) {
  Rng rng(seed);
  Tensor w;
  {
    Tape t;
    ParamBinder b(t, params);
    const Var out = forward(b);
    w = Tensor::randn(t.shape(out), rng, 1.0);
  }
  auto objective = [&] {
    Tape t;
    ParamBinder b(t, params);
    const Tensor& v = t.value(forward(b));
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += w[i] * v[i];
    return acc;
  };

  params.zero_grad();
  {
    Tape t;
    ParamBinder b(t, params, &params);
    const Var out = forward(b);
    t.backward(out, w);
  }

  std::size_t total = 0;
  for (auto& p : params.all())
    if (!p.frozen) total += p.value.size();
  GradCheck result;
  for (int s = 0; s < samples; ++s) {
    std::size_t k = rng() % total;
    Parameter* target = nullptr;
    for (auto& p : params.all()) {
      if (p.frozen) continue;
      if (k < p.value.size()) {
        target = &p;
        break;
      }
      k -= p.value.size();
    }
    const double analytic = target->grad[k];
    const double orig = target->value[k];
    target->value[k] = orig + h;
    const double fp = objective();
    target->value[k] = orig - h;
    const double fm = objective();
    target->value[k] = orig;
    const double numeric = (fp - fm) / (2 * h);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst = target->name + "[" + std::to_string(k) + "] analytic " + std::to_string(analytic) + " numeric " +
                     std::to_string(numeric);
    }
    ++result.checked;
  }
  return result;
}

/// Small images in [-1,1] as a [B,3,R,R] tensor.
inline Tensor signed_images(int batch, int resolution, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t({batch, 3, resolution, resolution});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

}  // namespace sp_test
