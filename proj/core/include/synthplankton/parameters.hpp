#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "synthplankton/tensor.hpp"

namespace synthplankton {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  /// Frozen parameters enter graphs as constants and never get gradients.
  bool frozen = false;
};

/// Named parameters in insertion order. References returned by add()/at()
/// stay valid for the lifetime of the set.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor init, bool frozen = false);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }
  std::size_t tensor_count() const { return params_.size(); }
  /// Total number of scalars.
  std::size_t scalar_count() const;

  void zero_grad();
  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const;

  bool operator==(const ParameterSet& other) const;

 private:
  std::deque<Parameter> params_;
};

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

/// Adaptive moment estimation with bias correction. Frozen parameters are
/// skipped.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(ParameterSet& params);

  const AdamOptions& options() const { return options_; }
  std::int64_t steps() const { return steps_; }

  // Checkpoint access.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  AdamOptions options_;
  std::int64_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace synthplankton
