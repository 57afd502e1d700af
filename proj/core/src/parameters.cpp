#include "synthplankton/parameters.hpp"

#include <cmath>
#include <cstring>

#include "synthplankton/error.hpp"
#include "synthplankton/rng.hpp"

namespace synthplankton {

Parameter& ParameterSet::add(std::string name, Tensor init, bool frozen) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  Parameter p;
  p.name = std::move(name);
  p.grad = Tensor(init.shape());
  p.value = std::move(init);
  p.frozen = frozen;
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParameterSet::at(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw Error("unknown parameter '" + name + "'");
}

const Parameter& ParameterSet::at(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw Error("unknown parameter '" + name + "'");
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return true;
  return false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = fnv1a("");
  for (const auto& p : params_) {
    h = fnv1a(p.name, h);
    h = fnv1a(shape_str(p.value.shape()), h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(double)), h);
  }
  return h;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.frozen != b.frozen || a.value.shape() != b.value.shape()) return false;
    if (std::memcmp(a.value.data(), b.value.data(), a.value.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

void Adam::step(ParameterSet& params) {
  auto& all = params.all();
  if (m_.empty()) {
    for (const auto& p : all) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }
  if (m_.size() != all.size()) throw Error("optimizer state does not match parameter set");
  ++steps_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& p = all[i];
    if (p.frozen) continue;
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
    }
  }
}

void Adam::restore(std::int64_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != v.size()) throw Error("optimizer state moment count mismatch");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace synthplankton
