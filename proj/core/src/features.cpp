#include "synthplankton/features.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/dnn.hpp>

#include "synthplankton/error.hpp"
#include "synthplankton/rng.hpp"

namespace synthplankton {

namespace fs = std::filesystem;

std::string to_string(ExtractorKind kind) {
  return kind == ExtractorKind::pretrained_embedding ? "pretrained" : "random";
}

ExtractorKind parse_extractor_kind(const std::string& text) {
  if (text == "pretrained" || text == "pretrained_embedding") return ExtractorKind::pretrained_embedding;
  if (text == "random" || text == "seeded_random_projection") return ExtractorKind::seeded_random_projection;
  throw Error("unknown extractor kind '" + text + "'");
}

void to_json(nlohmann::json& j, const ExtractorConfig& c) {
  j = {{"kind", to_string(c.kind)}, {"output_dim", c.output_dim}, {"input_resolution", c.input_resolution}};
  if (c.model_source) j["model_source"] = c.model_source->generic_string();
  if (c.seed) j["seed"] = *c.seed;
}

void from_json(const nlohmann::json& j, ExtractorConfig& c) {
  ExtractorConfig d;
  c.kind = parse_extractor_kind(j.value("kind", to_string(d.kind)));
  c.output_dim = j.value("output_dim", d.output_dim);
  c.input_resolution = j.value("input_resolution", d.input_resolution);
  c.model_source.reset();
  c.seed.reset();
  if (j.contains("model_source") && !j.at("model_source").is_null())
    c.model_source = std::filesystem::path(j.at("model_source").get<std::string>());
  if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
}

struct FeatureExtractor::Backend {
  // seeded_random_projection: features = clamp(sigmoid(W x + b), 0, 1)
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;

  // pretrained_embedding
  mutable cv::dnn::Net net;
  mutable std::mutex net_mutex;
};

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double squash(double x) {
  double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp(s, 0.0, 1.0);
}

Eigen::VectorXd flatten(const ImageRecord& img) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(img.pixels.size()));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) x[static_cast<Eigen::Index>(i)] = img.pixels[i];
  return x;
}

}  // namespace

FeatureExtractor::FeatureExtractor(ExtractorConfig config, std::unique_ptr<Backend> backend, std::string fingerprint)
    : config_(std::move(config)), backend_(std::move(backend)), fingerprint_(std::move(fingerprint)) {}
FeatureExtractor::FeatureExtractor(FeatureExtractor&&) noexcept = default;
FeatureExtractor& FeatureExtractor::operator=(FeatureExtractor&&) noexcept = default;
FeatureExtractor::~FeatureExtractor() = default;

FeatureExtractor FeatureExtractor::create(const ExtractorConfig& config) {
  if (config.output_dim < 1) throw Error("extractor output_dim must be positive");
  if (config.input_resolution < 1) throw Error("extractor input_resolution must be positive");

  auto backend = std::make_unique<Backend>();
  std::ostringstream canon;
  canon << "kind=" << to_string(config.kind) << ";dim=" << config.output_dim << ";res=" << config.input_resolution;

  if (config.kind == ExtractorKind::seeded_random_projection) {
    const std::uint64_t seed = config.seed.value_or(0);
    canon << ";seed=" << seed;
    const Eigen::Index in_dim = static_cast<Eigen::Index>(config.input_resolution) * config.input_resolution * 3;
    Rng rng(derive_seed(seed, {0x66656174u}));
    std::normal_distribution<double> normal(0.0, 1.0);
    const double gain = 2.0 / std::sqrt(static_cast<double>(in_dim));
    backend->weights.resize(config.output_dim, in_dim);
    for (Eigen::Index r = 0; r < backend->weights.rows(); ++r)
      for (Eigen::Index c = 0; c < in_dim; ++c) backend->weights(r, c) = gain * normal(rng);
    backend->bias.resize(config.output_dim);
    for (Eigen::Index r = 0; r < backend->bias.size(); ++r) backend->bias[r] = 0.5 * normal(rng);
  } else {
    if (!config.model_source || !fs::is_regular_file(*config.model_source))
      throw Error("extractor unavailable: model file missing");
    const std::string bytes = read_file(*config.model_source);
    try {
      backend->net = cv::dnn::readNet(config.model_source->string());
    } catch (const cv::Exception& e) {
      throw Error(std::string("extractor unavailable: ") + e.what());
    }
    if (backend->net.empty()) throw Error("extractor unavailable: cannot parse " + config.model_source->string());
    canon << ";model=" << hex64(fnv1a(bytes));
  }

  FeatureExtractor extractor(config, std::move(backend), hex64(fnv1a(canon.str())));
  if (config.kind == ExtractorKind::pretrained_embedding) {
    // Probe once so a dimension mismatch fails at construction time.
    ImageRecord probe;
    probe.source_path = "probe";
    probe.resolution = {config.input_resolution, config.input_resolution};
    probe.pixels.assign(probe.resolution.pixel_count() * 3, 0.5f);
    extractor.embed(probe);
  }
  return extractor;
}

std::vector<double> FeatureExtractor::embed(const ImageRecord& image) const {
  const Resolution in{config_.input_resolution, config_.input_resolution};
  const ImageRecord sized = resize_area(image, in);
  std::vector<double> out(config_.output_dim);

  if (config_.kind == ExtractorKind::seeded_random_projection) {
    Eigen::VectorXd pre = backend_->weights * flatten(sized) + backend_->bias;
    for (int i = 0; i < config_.output_dim; ++i) out[i] = squash(pre[i]);
  } else {
    int dims[4] = {1, 3, in.height, in.width};
    cv::Mat blob(4, dims, CV_32F);
    float* p = blob.ptr<float>();
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < in.height; ++r)
        for (int c = 0; c < in.width; ++c) *p++ = sized.at(r, c, ch);
    cv::Mat result;
    {
      std::lock_guard lock(backend_->net_mutex);
      try {
        backend_->net.setInput(blob);
        result = backend_->net.forward().clone();
      } catch (const cv::Exception& e) {
        throw Error(std::string("extractor unavailable: ") + e.what());
      }
    }
    if (static_cast<int>(result.total()) != config_.output_dim)
      throw Error("extractor unavailable: model emits " + std::to_string(result.total()) + " features, expected " +
                  std::to_string(config_.output_dim));
    const float* r = result.ptr<float>();
    for (int i = 0; i < config_.output_dim; ++i) out[i] = r[i];
  }

  for (double v : out)
    if (!std::isfinite(v)) throw Error("feature overflow: " + image.source_path);
  return out;
}

std::vector<double> FeatureExtractor::bias_response() const {
  if (config_.kind != ExtractorKind::seeded_random_projection)
    throw Error("bias_response is defined for the random projection extractor only");
  std::vector<double> out(config_.output_dim);
  for (int i = 0; i < config_.output_dim; ++i) out[i] = squash(backend_->bias[i]);
  return out;
}

FeatureSet extract_features(const ImageSet& images, const FeatureExtractor& extractor,
                            const std::string& source_manifest) {
  if (images.empty()) throw Error("extract_features: empty image set");
  FeatureSet fs;
  fs.extractor_fingerprint = extractor.fingerprint();
  fs.source_manifest = source_manifest;
  fs.vectors.resize(static_cast<Eigen::Index>(images.size()), extractor.output_dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto v = extractor.embed(images[i]);
    for (int j = 0; j < extractor.output_dim(); ++j) {
      const float f = static_cast<float>(v[j]);
      if (!std::isfinite(f)) throw Error("feature overflow: " + images[i].source_path);
      fs.vectors(static_cast<Eigen::Index>(i), j) = f;
    }
  }
  return fs;
}

namespace {

std::string encode_payload(const FeatureSet& f) {
  std::string bytes(static_cast<std::size_t>(f.vectors.size()) * 4, '\0');
  const float* src = f.vectors.data();
  for (Eigen::Index i = 0; i < f.vectors.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(src[i]);
    for (int b = 0; b < 4; ++b) bytes[static_cast<std::size_t>(i) * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xffu);
  }
  return bytes;
}

std::string payload_checksum(const std::string& fingerprint, const std::string& payload) {
  return hex64(fnv1a(payload, fnv1a(fingerprint + "\n")));
}

}  // namespace

void cache_features(const FeatureSet& features, const fs::path& path) {
  if (features.extractor_fingerprint.empty()) throw Error("untrusted cache: feature set has no fingerprint");
  const std::string payload = encode_payload(features);
  nlohmann::json header = {{"format", "featcache"},
                           {"version", kFeatureCacheVersion},
                           {"n", features.size()},
                           {"d", features.dim()},
                           {"fingerprint", features.extractor_fingerprint},
                           {"source_manifest", features.source_manifest},
                           {"checksum", payload_checksum(features.extractor_fingerprint, payload)}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write feature cache " + path.string());
  out << header.dump() << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("cannot write feature cache " + path.string());
}

FeatureSet load_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cache format: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("cache format: missing header in " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw Error("cache format: unreadable header in " + path.string());
  }
  if (header.value("format", "") != "featcache" || header.value("version", -1) != kFeatureCacheVersion)
    throw Error("cache format: unsupported version in " + path.string());
  if (!header.contains("fingerprint") || !header["fingerprint"].is_string() ||
      header["fingerprint"].get<std::string>().empty())
    throw Error("untrusted cache: no fingerprint in " + path.string());

  const auto n = header.value("n", std::int64_t{-1});
  const auto d = header.value("d", std::int64_t{-1});
  if (n < 0 || d < 1) throw Error("cache format: bad shape in " + path.string());

  std::string payload(static_cast<std::size_t>(n * d * 4), '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (in.gcount() != static_cast<std::streamsize>(payload.size())) throw Error("cache format: truncated " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) throw Error("cache format: trailing bytes in " + path.string());

  FeatureSet f;
  f.extractor_fingerprint = header["fingerprint"].get<std::string>();
  f.source_manifest = header.value("source_manifest", "");
  if (header.value("checksum", "") != payload_checksum(f.extractor_fingerprint, payload))
    throw Error("untrusted cache: fingerprint/checksum mismatch in " + path.string());

  f.vectors.resize(n, d);
  float* dst = f.vectors.data();
  for (std::int64_t i = 0; i < n * d; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[i * 4 + b])) << (8 * b);
    dst[i] = std::bit_cast<float>(u);
  }
  return f;
}

}  // namespace synthplankton
