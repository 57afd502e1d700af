#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "synthplankton/parameters.hpp"
#include "synthplankton/tensor.hpp"

namespace synthplankton {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Records a forward computation so gradients can be propagated back to the
/// Parameters used in it. One tape per forward/backward pass; not shared
/// across threads.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Var constant(Tensor value);
  /// Frozen parameters are recorded as constants.
  Var parameter(Parameter& p);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

  /// Gradient buffer of `v` during backward, zero-initialised on first use;
  /// nullptr when `v` does not require a gradient.
  Tensor* grad(Var v);

  /// Seeds d(root) = seed and accumulates into Parameter::grad of every
  /// trainable parameter reached.
  void backward(Var root, const Tensor& seed);
  /// Single reverse sweep seeded at several outputs at once.
  void backward(const std::vector<std::pair<Var, Tensor>>& seeds);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

namespace nn {

/// x [B,in], w [out,in], b [out] -> [B,out]
Var linear(Tape& t, Var x, Var w, Var b);
/// x [B,C,H,W], w [O,C,k,k], b [O]
Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad);
/// x [B,C,H,W], w [C,O,k,k], b [O]; output side (H-1)*stride - 2*pad + k
Var conv_transpose2d(Tape& t, Var x, Var w, Var b, int stride, int pad);

Var leaky_relu(Tape& t, Var x, double slope = 0.2);
Var sigmoid(Tape& t, Var x);
Var tanh(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var add_scalar(Tape& t, Var a, double c);
Var reshape(Tape& t, Var x, Shape shape);
/// [B,C,H,W] -> [B, C*H*W]
Var flatten(Tape& t, Var x);
/// Nearest-neighbour 2x upsampling of [B,C,H,W].
Var upsample2x(Tape& t, Var x);
/// [B,C,H,W] -> [B,C]
Var global_avg_pool(Tape& t, Var x);
/// x [B,C,H,W] scaled per (sample, channel) by gate [B,C].
Var channel_gate(Tape& t, Var x, Var gate);
/// Per (sample, channel): scale * (x - mean) / sqrt(var + eps) + bias, with
/// population variance over H*W. scale and bias are [B,C].
Var adain(Tape& t, Var x, Var scale, Var bias, double eps = 1e-8);
/// Row-wise z / sqrt(mean(z^2) + 1e-8).
Var pixel_norm(Tape& t, Var z);
/// [1, ...] -> [batch, ...]
Var broadcast_batch(Tape& t, Var x, int batch);

}  // namespace nn

double stable_sigmoid(double x);

}  // namespace synthplankton
