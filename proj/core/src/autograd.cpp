#include "synthplankton/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <Eigen/Core>

#include "synthplankton/error.hpp"

namespace synthplankton {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Parameter& p) {
  if (p.frozen) return constant(p.value);
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (Var v : inputs) n.requires_grad = n.requires_grad || requires_grad(v);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Tensor* Tape::grad(Var v) {
  Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

void Tape::backward(Var root, const Tensor& seed) { backward({{root, seed}}); }

void Tape::backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
  int start = -1;
  for (const auto& [root, seed] : seeds) {
    const Node& r = nodes_.at(static_cast<std::size_t>(root.id));
    if (seed.shape() != r.value.shape())
      throw Error("backward seed shape " + shape_str(seed.shape()) + " does not match " + shape_str(r.value.shape()));
    Tensor* g = grad(root);
    if (!g) continue;
    for (std::size_t j = 0; j < seed.size(); ++j) (*g)[j] += seed[j];
    start = std::max(start, root.id);
  }
  for (int i = start; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      double* g = n.param->grad.data();
      const double* src = n.grad.data();
      for (std::size_t j = 0; j < n.grad.size(); ++j) g[j] += src[j];
    }
  }
}

namespace nn {

namespace {

void expect_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) throw Error(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

struct ConvGeometry {
  int batch, channels, height, width, kernel, stride, pad, out_h, out_w;
  int col_rows() const { return channels * kernel * kernel; }
  int col_cols() const { return batch * out_h * out_w; }
};

// Unfolds a [B,C,H,W] image into a [C*k*k, B*Ho*Wo] row-major matrix.
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const int cols = g.col_cols();
  const int plane = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        double* dst = col + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * cols;
        for (int b = 0; b < g.batch; ++b) {
          const double* xb = x + static_cast<std::size_t>(b * g.channels + c) * g.height * g.width;
          double* db = dst + static_cast<std::size_t>(b) * plane;
          for (int oh = 0; oh < g.out_h; ++oh) {
            const int ih = oh * g.stride - g.pad + ki;
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.pad + kj;
              db[oh * g.out_w + ow] =
                  (ih >= 0 && ih < g.height && iw >= 0 && iw < g.width) ? xb[ih * g.width + iw] : 0.0;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into a [B,C,H,W] buffer.
void col2im(const double* col, const ConvGeometry& g, double* x) {
  const int cols = g.col_cols();
  const int plane = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const double* src = col + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * cols;
        for (int b = 0; b < g.batch; ++b) {
          double* xb = x + static_cast<std::size_t>(b * g.channels + c) * g.height * g.width;
          const double* sb = src + static_cast<std::size_t>(b) * plane;
          for (int oh = 0; oh < g.out_h; ++oh) {
            const int ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.height) continue;
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < g.width) xb[ih * g.width + iw] += sb[oh * g.out_w + ow];
            }
          }
        }
      }
    }
  }
}

// [B,C,P] <-> [C,B*P]
void batch_to_channel_major(const double* x, int batch, int channels, int plane, double* out) {
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c) {
      const double* src = x + (static_cast<std::size_t>(b) * channels + c) * plane;
      std::copy(src, src + plane, out + (static_cast<std::size_t>(c) * batch + b) * plane);
    }
}

void channel_to_batch_major(const double* x, int batch, int channels, int plane, double* out) {
  for (int c = 0; c < channels; ++c)
    for (int b = 0; b < batch; ++b) {
      const double* src = x + (static_cast<std::size_t>(c) * batch + b) * plane;
      std::copy(src, src + plane, out + (static_cast<std::size_t>(b) * channels + c) * plane);
    }
}

void accumulate(Tensor* dst, const double* src) {
  if (!dst) return;
  double* d = dst->data();
  for (std::size_t i = 0; i < dst->size(); ++i) d[i] += src[i];
}

}  // namespace

Var linear(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  expect_rank(xv, 2, "linear");
  expect_rank(wv, 2, "linear");
  const int batch = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
  if (wv.dim(1) != in || t.value(b).size() != static_cast<std::size_t>(out))
    throw Error("linear: shape mismatch " + shape_str(xv.shape()) + " x " + shape_str(wv.shape()));
  Tensor y({batch, out});
  MatMap ym(y.data(), batch, out);
  ym.noalias() = ConstMatMap(xv.data(), batch, in) * ConstMatMap(wv.data(), out, in).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(t.value(b).data(), out);
  return t.record(std::move(y), {x, w, b}, [=](Tape& tp, const Tensor& gy) {
    ConstMatMap g(gy.data(), batch, out);
    if (Tensor* gx = tp.grad(x)) MatMap(gx->data(), batch, in).noalias() += g * ConstMatMap(tp.value(w).data(), out, in);
    if (Tensor* gw = tp.grad(w))
      MatMap(gw->data(), out, in).noalias() += g.transpose() * ConstMatMap(tp.value(x).data(), batch, in);
    if (Tensor* gb = tp.grad(b)) Eigen::Map<Eigen::RowVectorXd>(gb->data(), out) += g.colwise().sum();
  });
}

Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  expect_rank(xv, 4, "conv2d");
  expect_rank(wv, 4, "conv2d");
  const int k = wv.dim(2);
  if (wv.dim(1) != xv.dim(1) || wv.dim(3) != k || t.value(b).size() != static_cast<std::size_t>(wv.dim(0)))
    throw Error("conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " + shape_str(xv.shape()));
  ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), k, stride, pad, 0, 0};
  g.out_h = (g.height + 2 * pad - k) / stride + 1;
  g.out_w = (g.width + 2 * pad - k) / stride + 1;
  if (g.out_h < 1 || g.out_w < 1) throw Error("conv2d: input too small for kernel");
  const int out_c = wv.dim(0);
  const int plane = g.out_h * g.out_w;

  auto col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
  im2col(xv.data(), g, col->data());
  std::vector<double> ymat(static_cast<std::size_t>(out_c) * g.col_cols());
  MatMap ym(ymat.data(), out_c, g.col_cols());
  ym.noalias() = ConstMatMap(wv.data(), out_c, g.col_rows()) * ConstMatMap(col->data(), g.col_rows(), g.col_cols());
  ym.colwise() += Eigen::Map<const Eigen::VectorXd>(t.value(b).data(), out_c);
  Tensor y({g.batch, out_c, g.out_h, g.out_w});
  channel_to_batch_major(ymat.data(), g.batch, out_c, plane, y.data());

  return t.record(std::move(y), {x, w, b}, [=](Tape& tp, const Tensor& gy) {
    std::vector<double> gmat(static_cast<std::size_t>(out_c) * g.col_cols());
    batch_to_channel_major(gy.data(), g.batch, out_c, plane, gmat.data());
    ConstMatMap gm(gmat.data(), out_c, g.col_cols());
    if (Tensor* gw = tp.grad(w))
      MatMap(gw->data(), out_c, g.col_rows()).noalias() += gm * ConstMatMap(col->data(), g.col_rows(), g.col_cols()).transpose();
    if (Tensor* gb = tp.grad(b)) Eigen::Map<Eigen::VectorXd>(gb->data(), out_c) += gm.rowwise().sum();
    if (Tensor* gx = tp.grad(x)) {
      std::vector<double> dcol(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
      MatMap(dcol.data(), g.col_rows(), g.col_cols()).noalias() =
          ConstMatMap(tp.value(w).data(), out_c, g.col_rows()).transpose() * gm;
      col2im(dcol.data(), g, gx->data());
    }
  });
}

Var conv_transpose2d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  expect_rank(xv, 4, "conv_transpose2d");
  expect_rank(wv, 4, "conv_transpose2d");
  const int batch = xv.dim(0), in_c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int out_c = wv.dim(1), k = wv.dim(2);
  if (wv.dim(0) != in_c || wv.dim(3) != k || t.value(b).size() != static_cast<std::size_t>(out_c))
    throw Error("conv_transpose2d: weight " + shape_str(wv.shape()) + " incompatible with input " + shape_str(xv.shape()));
  const int out_h = (h - 1) * stride - 2 * pad + k;
  const int out_w = (wd - 1) * stride - 2 * pad + k;
  if (out_h < 1 || out_w < 1) throw Error("conv_transpose2d: empty output");
  // The output image seen through a regular convolution reproduces the input grid.
  const ConvGeometry g{batch, out_c, out_h, out_w, k, stride, pad, h, wd};
  const int plane = h * wd;

  auto xmat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(in_c) * g.col_cols());
  batch_to_channel_major(xv.data(), batch, in_c, plane, xmat->data());
  std::vector<double> col(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
  MatMap(col.data(), g.col_rows(), g.col_cols()).noalias() =
      ConstMatMap(wv.data(), in_c, g.col_rows()).transpose() * ConstMatMap(xmat->data(), in_c, g.col_cols());
  Tensor y({batch, out_c, out_h, out_w});
  col2im(col.data(), g, y.data());
  const Tensor& bv = t.value(b);
  const int out_plane = out_h * out_w;
  for (int bi = 0; bi < batch; ++bi)
    for (int c = 0; c < out_c; ++c) {
      double* p = y.data() + (static_cast<std::size_t>(bi) * out_c + c) * out_plane;
      for (int i = 0; i < out_plane; ++i) p[i] += bv[c];
    }

  return t.record(std::move(y), {x, w, b}, [=](Tape& tp, const Tensor& gy) {
    std::vector<double> gcol(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
    im2col(gy.data(), g, gcol.data());
    ConstMatMap gc(gcol.data(), g.col_rows(), g.col_cols());
    if (Tensor* gw = tp.grad(w))
      MatMap(gw->data(), in_c, g.col_rows()).noalias() += ConstMatMap(xmat->data(), in_c, g.col_cols()) * gc.transpose();
    if (Tensor* gb = tp.grad(b)) {
      for (int bi = 0; bi < batch; ++bi)
        for (int c = 0; c < out_c; ++c) {
          const double* p = gy.data() + (static_cast<std::size_t>(bi) * out_c + c) * out_plane;
          double s = 0.0;
          for (int i = 0; i < out_plane; ++i) s += p[i];
          (*gb)[c] += s;
        }
    }
    if (Tensor* gx = tp.grad(x)) {
      std::vector<double> dx(static_cast<std::size_t>(in_c) * g.col_cols());
      MatMap(dx.data(), in_c, g.col_cols()).noalias() = ConstMatMap(tp.value(w).data(), in_c, g.col_rows()) * gc;
      std::vector<double> dxb(dx.size());
      channel_to_batch_major(dx.data(), batch, in_c, plane, dxb.data());
      accumulate(gx, dxb.data());
    }
  });
}

Var leaky_relu(Tape& t, Var x, double slope) {
  const Tensor& in = t.value(x);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0 ? in[i] : slope * in[i];
  return t.record(std::move(out), {x}, [=](Tape& tp, const Tensor& gy) {
    Tensor* gx = tp.grad(x);
    const Tensor& xv = tp.value(x);
    for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += xv[i] > 0 ? gy[i] : slope * gy[i];
  });
}

Var sigmoid(Tape& t, Var x) {
  const Tensor& in = t.value(x);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = stable_sigmoid(in[i]);
  auto saved = std::make_shared<Tensor>(out);
  return t.record(std::move(out), {x}, [=](Tape& tp, const Tensor& gy) {
    Tensor* gx = tp.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i] * (*saved)[i] * (1.0 - (*saved)[i]);
  });
}

Var tanh(Tape& t, Var x) {
  const Tensor& in = t.value(x);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
  auto saved = std::make_shared<Tensor>(out);
  return t.record(std::move(out), {x}, [=](Tape& tp, const Tensor& gy) {
    Tensor* gx = tp.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i] * (1.0 - (*saved)[i] * (*saved)[i]);
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.shape() != bv.shape()) throw Error("add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Tensor& gy) {
    accumulate(tp.grad(a), gy.data());
    accumulate(tp.grad(b), gy.data());
  });
}

Var add_scalar(Tape& t, Var a, double c) {
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
  return t.record(std::move(out), {a}, [=](Tape& tp, const Tensor& gy) { accumulate(tp.grad(a), gy.data()); });
}

Var reshape(Tape& t, Var x, Shape shape) {
  Tensor out = t.value(x).reshaped(std::move(shape));
  return t.record(std::move(out), {x}, [=](Tape& tp, const Tensor& gy) { accumulate(tp.grad(x), gy.data()); });
}

Var flatten(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const int batch = xv.dim(0);
  return reshape(t, x, {batch, static_cast<int>(xv.size() / static_cast<std::size_t>(batch))});
}

Var upsample2x(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  expect_rank(xv, 4, "upsample2x");
  const int bc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
  for (int p = 0; p < bc; ++p)
    for (int r = 0; r < 2 * h; ++r)
      for (int c = 0; c < 2 * w; ++c)
        out[(static_cast<std::size_t>(p) * 2 * h + r) * 2 * w + c] = xv[(static_cast<std::size_t>(p) * h + r / 2) * w + c / 2];
  return t.record(std::move(out), {x}, [=](Tape& tp, const Tensor& gy) {
    Tensor* gx = tp.grad(x);
    for (int p = 0; p < bc; ++p)
      for (int r = 0; r < 2 * h; ++r)
        for (int c = 0; c < 2 * w; ++c)
          (*gx)[(static_cast<std::size_t>(p) * h + r / 2) * w + c / 2] += gy[(static_cast<std::size_t>(p) * 2 * h + r) * 2 * w + c];
  });
}

Var global_avg_pool(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  expect_rank(xv, 4, "global_avg_pool");
  const int batch = xv.dim(0), ch = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor out({batch, ch});
  for (int p = 0; p < batch * ch; ++p) {
    double s = 0.0;
    for (int i = 0; i < plane; ++i) s += xv[static_cast<std::size_t>(p) * plane + i];
    out[p] = s / plane;
  }
  return t.record(std::move(out), {x}, [=](Tape& tp, const Tensor& gy) {
    Tensor* gx = tp.grad(x);
    for (int p = 0; p < batch * ch; ++p)
      for (int i = 0; i < plane; ++i) (*gx)[static_cast<std::size_t>(p) * plane + i] += gy[p] / plane;
  });
}

Var channel_gate(Tape& t, Var x, Var gate) {
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gate);
  expect_rank(xv, 4, "channel_gate");
  if (gv.rank() != 2 || gv.dim(0) != xv.dim(0) || gv.dim(1) != xv.dim(1))
    throw Error("sle shapes: gate " + shape_str(gv.shape()) + " vs feature map " + shape_str(xv.shape()));
  const int bc = xv.dim(0) * xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor out(xv.shape());
  for (int p = 0; p < bc; ++p)
    for (int i = 0; i < plane; ++i) {
      const std::size_t j = static_cast<std::size_t>(p) * plane + i;
      out[j] = gv[p] * xv[j];
    }
  return t.record(std::move(out), {x, gate}, [=](Tape& tp, const Tensor& gy) {
    const Tensor& xs = tp.value(x);
    const Tensor& gs = tp.value(gate);
    Tensor* gx = tp.grad(x);
    Tensor* gg = tp.grad(gate);
    for (int p = 0; p < bc; ++p) {
      double acc = 0.0;
      for (int i = 0; i < plane; ++i) {
        const std::size_t j = static_cast<std::size_t>(p) * plane + i;
        if (gx) (*gx)[j] += gy[j] * gs[p];
        acc += gy[j] * xs[j];
      }
      if (gg) (*gg)[p] += acc;
    }
  });
}

Var adain(Tape& t, Var x, Var scale, Var bias, double eps) {
  const Tensor& xv = t.value(x);
  const Tensor& sv = t.value(scale);
  const Tensor& bv = t.value(bias);
  expect_rank(xv, 4, "adain");
  const Shape expected{xv.dim(0), xv.dim(1)};
  if (sv.shape() != expected || bv.shape() != expected)
    throw Error("adain channels: style " + shape_str(sv.shape()) + " / " + shape_str(bv.shape()) + " vs feature map " +
                shape_str(xv.shape()));
  const int bc = xv.dim(0) * xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  auto normalized = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(bc);
  Tensor out(xv.shape());
  for (int p = 0; p < bc; ++p) {
    const double* xp = xv.data() + static_cast<std::size_t>(p) * plane;
    double mean = 0.0;
    for (int i = 0; i < plane; ++i) mean += xp[i];
    mean /= plane;
    double var = 0.0;
    for (int i = 0; i < plane; ++i) var += (xp[i] - mean) * (xp[i] - mean);
    var /= plane;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[p] = is;
    for (int i = 0; i < plane; ++i) {
      const std::size_t j = static_cast<std::size_t>(p) * plane + i;
      (*normalized)[j] = (xp[i] - mean) * is;
      out[j] = sv[p] * (*normalized)[j] + bv[p];
    }
  }
  return t.record(std::move(out), {x, scale, bias}, [=](Tape& tp, const Tensor& gy) {
    const Tensor& ss = tp.value(scale);
    Tensor* gx = tp.grad(x);
    Tensor* gs = tp.grad(scale);
    Tensor* gb = tp.grad(bias);
    for (int p = 0; p < bc; ++p) {
      const std::size_t base = static_cast<std::size_t>(p) * plane;
      double sum_g = 0.0, sum_gn = 0.0;
      for (int i = 0; i < plane; ++i) {
        sum_g += gy[base + i];
        sum_gn += gy[base + i] * (*normalized)[base + i];
      }
      if (gb) (*gb)[p] += sum_g;
      if (gs) (*gs)[p] += sum_gn;
      if (gx) {
        // d/dx of the normalisation, with dn = g * scale.
        const double mean_dn = ss[p] * sum_g / plane;
        const double mean_dn_n = ss[p] * sum_gn / plane;
        for (int i = 0; i < plane; ++i) {
          const double dn = gy[base + i] * ss[p];
          (*gx)[base + i] += (*inv_std)[p] * (dn - mean_dn - (*normalized)[base + i] * mean_dn_n);
        }
      }
    }
  });
}

Var pixel_norm(Tape& t, Var z) {
  const Tensor& zv = t.value(z);
  expect_rank(zv, 2, "pixel_norm");
  const int batch = zv.dim(0), d = zv.dim(1);
  auto inv_r = std::make_shared<std::vector<double>>(batch);
  Tensor out(zv.shape());
  for (int b = 0; b < batch; ++b) {
    double ms = 0.0;
    for (int i = 0; i < d; ++i) ms += zv[static_cast<std::size_t>(b) * d + i] * zv[static_cast<std::size_t>(b) * d + i];
    ms /= d;
    const double ir = 1.0 / std::sqrt(ms + 1e-8);
    (*inv_r)[b] = ir;
    for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(b) * d + i] = zv[static_cast<std::size_t>(b) * d + i] * ir;
  }
  return t.record(std::move(out), {z}, [=](Tape& tp, const Tensor& gy) {
    Tensor* gz = tp.grad(z);
    const Tensor& zs = tp.value(z);
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * d;
      const double ir = (*inv_r)[b];
      double dot = 0.0;
      for (int i = 0; i < d; ++i) dot += gy[base + i] * zs[base + i];
      for (int i = 0; i < d; ++i) (*gz)[base + i] += gy[base + i] * ir - dot * zs[base + i] * ir * ir * ir / d;
    }
  });
}

Var broadcast_batch(Tape& t, Var x, int batch) {
  const Tensor& xv = t.value(x);
  if (xv.rank() < 1 || xv.dim(0) != 1) throw Error("broadcast_batch: leading dimension must be 1");
  Shape shape = xv.shape();
  shape[0] = batch;
  Tensor out(shape);
  const std::size_t n = xv.size();
  for (int b = 0; b < batch; ++b) std::copy(xv.data(), xv.data() + n, out.data() + static_cast<std::size_t>(b) * n);
  return t.record(std::move(out), {x}, [=](Tape& tp, const Tensor& gy) {
    Tensor* gx = tp.grad(x);
    for (int b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < n; ++i) (*gx)[i] += gy[static_cast<std::size_t>(b) * n + i];
  });
}

}  // namespace nn
}  // namespace synthplankton
