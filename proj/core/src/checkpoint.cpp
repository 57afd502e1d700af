#include "synthplankton/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <system_error>

#include "synthplankton/rng.hpp"

namespace synthplankton {

namespace {

constexpr const char* kFormat = "synthplankton-checkpoint";

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double num(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

nlohmann::json point_json(const MetricPoint& p) {
  return {{"iteration", p.iteration}, {"wall_clock_s", p.wall_clock_s}, {"d_loss", num(p.d_loss)},
          {"g_loss", num(p.g_loss)},  {"fid", num(p.fid)},              {"fid_train", num(p.fid_train)},
          {"kid", num(p.kid)},        {"diversity", num(p.diversity)}};
}

MetricPoint point_from(const nlohmann::json& j) {
  MetricPoint p;
  p.iteration = j.at("iteration").get<std::int64_t>();
  p.wall_clock_s = num(j.at("wall_clock_s"));
  p.d_loss = num(j.at("d_loss"));
  p.g_loss = num(j.at("g_loss"));
  p.fid = num(j.at("fid"));
  p.fid_train = num(j.at("fid_train"));
  p.kid = num(j.at("kid"));
  p.diversity = num(j.at("diversity"));
  return p;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void append_le(std::string& out, const Tensor& t) {
  const std::size_t at = out.size();
  out.resize(at + t.size() * 8);
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(t[i]);
    for (int b = 0; b < 8; ++b) out[at + i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
}

Tensor read_le(const std::string& payload, std::size_t& offset, const Shape& shape) {
  const std::size_t n = numel(shape);
  if (offset + n * 8 > payload.size()) throw Error("checkpoint corrupt: payload truncated");
  Tensor t(shape);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[offset + i * 8 + b])) << (8 * b);
    t[i] = std::bit_cast<double>(bits);
  }
  offset += n * 8;
  return t;
}

struct TensorTable {
  nlohmann::json entries = nlohmann::json::array();
  std::string payload;

  void add(const std::string& name, const Tensor& t) {
    entries.push_back({{"name", name}, {"shape", t.shape()}});
    append_le(payload, t);
  }
};

void restore_params(ParameterSet& ps, const std::string& prefix, const std::map<std::string, Tensor>& tensors) {
  for (auto& p : ps.all()) {
    auto it = tensors.find(prefix + p.name);
    if (it == tensors.end()) throw Error("checkpoint corrupt: missing tensor " + prefix + p.name);
    if (it->second.shape() != p.value.shape())
      throw Error("checkpoint corrupt: tensor " + prefix + p.name + " has shape " + shape_str(it->second.shape()));
    p.value = it->second;
  }
}

void restore_adam(Adam& opt, const std::string& prefix, const nlohmann::json& header,
                  const std::map<std::string, Tensor>& tensors) {
  const auto& h = header.at(prefix);
  const auto count = h.at("moments").get<std::size_t>();
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  for (std::size_t i = 0; i < count; ++i) {
    const auto mi = tensors.find(prefix + ".m." + std::to_string(i));
    const auto vi = tensors.find(prefix + ".v." + std::to_string(i));
    if (mi == tensors.end() || vi == tensors.end()) throw Error("checkpoint corrupt: missing optimizer moments");
    m.push_back(mi->second);
    v.push_back(vi->second);
  }
  opt.restore(h.at("steps").get<std::int64_t>(), std::move(m), std::move(v));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& config) {
  TensorTable table;
  for (const auto& p : state.generator.params().all()) table.add("g." + p.name, p.value);
  for (const auto& p : state.discriminator.params().all()) table.add("d." + p.name, p.value);
  auto add_adam = [&](const Adam& opt, const std::string& prefix) {
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
      table.add(prefix + ".m." + std::to_string(i), opt.first_moments()[i]);
      table.add(prefix + ".v." + std::to_string(i), opt.second_moments()[i]);
    }
  };
  add_adam(state.g_opt, "g_opt");
  add_adam(state.d_opt, "d_opt");

  nlohmann::json history = nlohmann::json::array();
  for (const auto& p : state.metric_history) history.push_back(point_json(p));

  const nlohmann::json header = {
      {"format", kFormat},
      {"version", kCheckpointVersion},
      {"iteration", state.iteration},
      {"wall_clock_seconds", state.wall_clock_seconds},
      {"nonfinite_streak", state.nonfinite_streak},
      {"resolution", state.discriminator.resolution()},
      {"gen_spec", state.generator.spec()},
      {"disc_spec", state.discriminator.spec()},
      {"train", config},
      {"projection_checksum", hex(state.discriminator.projection_params().checksum())},
      {"g_opt", {{"steps", state.g_opt.steps()}, {"moments", state.g_opt.first_moments().size()}}},
      {"d_opt", {{"steps", state.d_opt.steps()}, {"moments", state.d_opt.first_moments().size()}}},
      {"metric_history", history},
      {"tensors", table.entries},
      {"payload_bytes", table.payload.size()},
      {"checksum", hex(fnv1a(table.payload))},
  };

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << header.dump() << '\n';
    out.write(table.payload.data(), static_cast<std::streamsize>(table.payload.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error("short write to " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("checkpoint format: missing header in " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw Error("checkpoint format: header is not JSON in " + path.string());
  }
  if (header.value("format", std::string()) != kFormat) throw Error("checkpoint format: not a checkpoint");
  if (header.value("version", -1) != kCheckpointVersion)
    throw Error("checkpoint format: version " + header.value("version", nlohmann::json()).dump() + " unsupported");

  std::ostringstream rest;
  rest << in.rdbuf();
  const std::string payload = rest.str();
  if (payload.size() != header.at("payload_bytes").get<std::size_t>())
    throw Error("checkpoint corrupt: payload is " + std::to_string(payload.size()) + " bytes");
  if (hex(fnv1a(payload)) != header.at("checksum").get<std::string>()) throw Error("checkpoint corrupt: checksum");

  std::map<std::string, Tensor> tensors;
  std::size_t offset = 0;
  for (const auto& e : header.at("tensors"))
    tensors.emplace(e.at("name").get<std::string>(), read_le(payload, offset, e.at("shape").get<Shape>()));

  LoadedCheckpoint out{TrainState{0,
                                  Generator::build(header.at("gen_spec").get<GeneratorSpec>(), 0),
                                  Discriminator::build(header.at("disc_spec").get<DiscriminatorSpec>(),
                                                       header.at("resolution").get<int>(), 0),
                                  Adam(),
                                  Adam(),
                                  0.0,
                                  {},
                                  0},
                       header.at("train").get<TrainConfig>()};
  TrainState& s = out.state;
  if (hex(s.discriminator.projection_params().checksum()) != header.at("projection_checksum").get<std::string>())
    throw Error("checkpoint corrupt: frozen projection stack does not rebuild identically");
  restore_params(s.generator.params(), "g.", tensors);
  restore_params(s.discriminator.params(), "d.", tensors);

  AdamOptions g_opt;
  g_opt.learning_rate = out.config.g_lr;
  AdamOptions d_opt;
  d_opt.learning_rate = out.config.d_lr;
  s.g_opt = Adam(g_opt);
  s.d_opt = Adam(d_opt);
  restore_adam(s.g_opt, "g_opt", header, tensors);
  restore_adam(s.d_opt, "d_opt", header, tensors);

  s.iteration = header.at("iteration").get<std::int64_t>();
  s.wall_clock_seconds = header.at("wall_clock_seconds").get<double>();
  s.nonfinite_streak = header.value("nonfinite_streak", 0);
  for (const auto& p : header.at("metric_history")) s.metric_history.push_back(point_from(p));
  return out;
}

}  // namespace synthplankton
