#include "hkd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace hkd::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

// Accumulates `g` into the gradient of parent `i` if it wants one.
template <typename F>
void accumulate(hkd::detail::Node& self, std::size_t i, F&& fn) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return;
  fn(p.ensure_grad());
}

}  // namespace

double smooth_l1_value(double x) {
  double ax = std::abs(x);
  return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](hkd::detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      accumulate(self, k, [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
  }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](hkd::detail::Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate(self, 1, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  }, "sub");
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](hkd::detail::Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
  }, "scale");
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, {a}, [](hkd::detail::Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (auto& x : g) x += self.grad[0];
    });
  }, "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) return Tensor::scalar(0.0);
  double s = 0.0;
  for (const auto& t : terms) {
    if (t.numel() != 1) throw ShapeError("add_n: terms must be scalars");
    s += t.item();
  }
  std::vector<Tensor> parents(terms.begin(), terms.end());
  return make_result({1}, {s}, std::move(parents), [](hkd::detail::Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      accumulate(self, k, [&](std::vector<double>& g) { g[0] += self.grad[0]; });
    }
  }, "add_n");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, [](hkd::detail::Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  }, "reshape");
}

Tensor flatten(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("flatten: need rank >= 2");
  return reshape(a, {a.dim(0), a.numel() / a.dim(0)});
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return make_result(a.shape(), std::move(out), {a}, [](hkd::detail::Node& self) {
    const auto& x = self.parents[0]->value;
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) g[i] += self.grad[i];
      }
    });
  }, "relu");
}

Tensor maxpool2x2(const Tensor& a) {
  require_rank(a, 4, "maxpool2x2");
  const auto n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (h % 2 || w % 2) throw ShapeError("maxpool2x2: spatial size must be even, got " + shape_str(a.shape()));
  const auto oh = h / 2, ow = w / 2;
  std::vector<double> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  auto av = a.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = av.data() + plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (2 * y) * w + 2 * x;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (auto k : cand) {
          if (src[k] > src[best]) best = k;
        }
        auto o = plane * oh * ow + y * ow + x;
        out[o] = src[best];
        argmax[o] = plane * h * w + best;
      }
    }
  }
  return make_result({n, c, oh, ow}, std::move(out), {a}, [argmax = std::move(argmax)](hkd::detail::Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
    });
  }, "maxpool2x2");
}

Tensor upsample2x(const Tensor& a) {
  require_rank(a, 4, "upsample2x");
  const auto n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  const auto oh = 2 * h, ow = 2 * w;
  std::vector<double> out(n * c * oh * ow);
  auto av = a.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        out[plane * oh * ow + y * ow + x] = av[plane * h * w + (y / 2) * w + x / 2];
      }
    }
  }
  return make_result({n, c, oh, ow}, std::move(out), {a}, [n, c, h, w](hkd::detail::Node& self) {
    const auto oh = 2 * h, ow = 2 * w;
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t x = 0; x < ow; ++x) {
            g[plane * h * w + (y / 2) * w + x / 2] += self.grad[plane * oh * ow + y * ow + x];
          }
        }
      }
    });
  }, "upsample2x");
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != ref[d]) {
        throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(ref));
      }
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape shape = ref;
  shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].data();
    const auto block = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.data() + o * block, block, out.data() + o * total * inner + offset * inner);
    }
    offset += extents[k];
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_result(std::move(shape), std::move(out), std::move(parents),
                     [extents, outer, inner, total](hkd::detail::Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const auto block = extents[k] * inner;
      accumulate(self, k, [&](std::vector<double>& g) {
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + o * total * inner + offset * inner;
          double* dst = g.data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      });
      offset += extents[k];
    }
  }, "concat");
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, k, kh, kw, oh, ow;
  int stride, pad;
  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return oh * ow; }
};

void im2col(const ConvGeometry& g, const double* img, double* col) {
  const auto cols = g.col_cols();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((ch * g.kh + i) * g.kw + j) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long y = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(i);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long x = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(j);
            const bool inside = y >= 0 && y < static_cast<long>(g.h) && x >= 0 && x < static_cast<long>(g.w);
            row[oy * g.ow + ox] = inside ? img[(ch * g.h + y) * g.w + x] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, double* img) {
  const auto cols = g.col_cols();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((ch * g.kh + i) * g.kw + j) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long y = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(i);
          if (y < 0 || y >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long x = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(j);
            if (x < 0 || x >= static_cast<long>(g.w)) continue;
            img[(ch * g.h + y) * g.w + x] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require_rank(bias, 1, "conv2d bias");
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.k = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (weight.dim(1) != g.c) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " does not match input " + shape_str(input.shape()));
  }
  if (bias.dim(0) != g.k) throw ShapeError("conv2d: bias size does not match output channels");
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("conv2d: kernel sizes must be odd");
  const long span_h = static_cast<long>(g.h) + 2 * pad - static_cast<long>(g.kh);
  const long span_w = static_cast<long>(g.w) + 2 * pad - static_cast<long>(g.kw);
  if (span_h < 0 || span_w < 0 || span_h % stride || span_w % stride) {
    throw ShapeError("conv2d: non-integer or empty output size for input " + shape_str(input.shape()) + " kernel " +
                     shape_str(weight.shape()) + " stride " + std::to_string(stride) + " pad " + std::to_string(pad));
  }
  g.oh = static_cast<std::size_t>(span_h / stride + 1);
  g.ow = static_cast<std::size_t>(span_w / stride + 1);

  const auto rows = g.col_rows();
  const auto cols = g.col_cols();
  const bool keep_cols = weight.requires_grad() && NoGradGuard::grad_enabled();
  std::vector<double> col_store(keep_cols ? g.n * rows * cols : rows * cols);
  std::vector<double> out(g.n * g.k * cols);

  ConstMapMat wmat(weight.data().data(), static_cast<Eigen::Index>(g.k), static_cast<Eigen::Index>(rows));
  auto bv = bias.data();
  for (std::size_t b = 0; b < g.n; ++b) {
    double* col = col_store.data() + (keep_cols ? b * rows * cols : 0);
    im2col(g, input.data().data() + b * g.c * g.h * g.w, col);
    MapMat omat(out.data() + b * g.k * cols, static_cast<Eigen::Index>(g.k), static_cast<Eigen::Index>(cols));
    omat.noalias() = wmat * ConstMapMat(col, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t k = 0; k < g.k; ++k) omat.row(static_cast<Eigen::Index>(k)).array() += bv[k];
  }
  if (!keep_cols) col_store.clear();

  return make_result({g.n, g.k, g.oh, g.ow}, std::move(out), {input, weight, bias},
                     [g, cols_saved = std::move(col_store)](hkd::detail::Node& self) {
    const auto rows = g.col_rows();
    const auto cols = g.col_cols();
    const auto R = static_cast<Eigen::Index>(rows), P = static_cast<Eigen::Index>(cols),
               K = static_cast<Eigen::Index>(g.k);
    const auto& in = *self.parents[0];
    const auto& wt = *self.parents[1];
    auto& bs = *self.parents[2];
    if (bs.requires_grad) {
      auto& gb = bs.ensure_grad();
      for (std::size_t b = 0; b < g.n; ++b) {
        for (std::size_t k = 0; k < g.k; ++k) {
          const double* src = self.grad.data() + (b * g.k + k) * cols;
          double s = 0.0;
          for (std::size_t p = 0; p < cols; ++p) s += src[p];
          gb[k] += s;
        }
      }
    }
    if (wt.requires_grad) {
      auto& gw = self.parents[1]->ensure_grad();
      MapMat gwm(gw.data(), K, R);
      for (std::size_t b = 0; b < g.n; ++b) {
        ConstMapMat dy(self.grad.data() + b * g.k * cols, K, P);
        ConstMapMat col(cols_saved.data() + b * rows * cols, R, P);
        gwm.noalias() += dy * col.transpose();
      }
    }
    if (in.requires_grad) {
      auto& gi = self.parents[0]->ensure_grad();
      ConstMapMat wmat(wt.value.data(), K, R);
      RowMat dcol(R, P);
      for (std::size_t b = 0; b < g.n; ++b) {
        ConstMapMat dy(self.grad.data() + b * g.k * cols, K, P);
        dcol.noalias() = wmat.transpose() * dy;
        col2im(g, dcol.data(), gi.data() + b * g.c * g.h * g.w);
      }
    }
  }, "conv2d");
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  require_rank(bias, 1, "linear bias");
  const auto n = input.dim(0), d = input.dim(1), m = weight.dim(1);
  if (weight.dim(0) != d || bias.dim(0) != m) {
    throw ShapeError("linear: shapes " + shape_str(input.shape()) + " x " + shape_str(weight.shape()) + " + " +
                     shape_str(bias.shape()) + " do not agree");
  }
  const auto N = static_cast<Eigen::Index>(n), D = static_cast<Eigen::Index>(d), M = static_cast<Eigen::Index>(m);
  std::vector<double> out(n * m);
  MapMat om(out.data(), N, M);
  om.noalias() = ConstMapMat(input.data().data(), N, D) * ConstMapMat(weight.data().data(), D, M);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), M);
  return make_result({n, m}, std::move(out), {input, weight, bias}, [N, D, M](hkd::detail::Node& self) {
    ConstMapMat dy(self.grad.data(), N, M);
    const auto& x = *self.parents[0];
    const auto& w = *self.parents[1];
    accumulate(self, 0, [&](std::vector<double>& g) {
      MapMat(g.data(), N, D).noalias() += dy * ConstMapMat(w.value.data(), D, M).transpose();
    });
    accumulate(self, 1, [&](std::vector<double>& g) {
      MapMat(g.data(), D, M).noalias() += ConstMapMat(x.value.data(), N, D).transpose() * dy;
    });
    accumulate(self, 2, [&](std::vector<double>& g) {
      // plain loop: Eigen's vectorised column sums depend on buffer alignment
      for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < M; ++j) g[static_cast<std::size_t>(j)] += dy(i, j);
    });
  }, "linear");
}

detail::BilinearTaps detail::bilinear_taps(std::size_t height, std::size_t width, double y, double x) {
  const double ymax = static_cast<double>(height - 1);
  const double xmax = static_cast<double>(width - 1);
  y = std::clamp(y, 0.0, ymax);
  x = std::clamp(x, 0.0, xmax);
  auto y0 = static_cast<std::size_t>(std::floor(y));
  auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y1 = std::min(y0 + 1, height - 1);
  const auto x1 = std::min(x0 + 1, width - 1);
  const double ly = y - static_cast<double>(y0);
  const double lx = x - static_cast<double>(x0);
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  return {{y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1},
          {hy * hx, hy * lx, ly * hx, ly * lx}};
}

Tensor bilinear_sample(const Tensor& feature, double x, double y) {
  require_rank(feature, 3, "bilinear_sample");
  if (!std::isfinite(x) || !std::isfinite(y)) throw NumericError("bilinear_sample: non-finite coordinate");
  const auto c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const auto taps = detail::bilinear_taps(h, w, y, x);
  std::vector<double> out(c);
  auto fv = feature.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = fv.data() + ch * h * w;
    double v = 0.0;
    for (int t = 0; t < 4; ++t) v += taps.weight[t] * plane[taps.index[t]];
    out[ch] = v;
  }
  return make_result({c}, std::move(out), {feature}, [taps, c, h, w](hkd::detail::Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (int t = 0; t < 4; ++t) g[ch * h * w + taps.index[t]] += taps.weight[t] * self.grad[ch];
      }
    });
  }, "bilinear_sample");
}

std::vector<double> softmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "softmax_rows");
  const auto n = logits.dim(0), k = logits.dim(1);
  std::vector<double> p(n * k);
  auto lv = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = lv.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] = std::exp(row[j] - mx) / z;
  }
  return p;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const auto n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_cross_entropy: label count does not match rows");
  auto lv = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) throw ShapeError("softmax_cross_entropy: label out of range");
    const double* row = lv.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    loss += std::log(z) + mx - row[labels[i]];
  }
  loss /= static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result({1}, {loss}, {logits}, [lab = std::move(lab), n, k](hkd::detail::Node& self) {
    const auto& x = *self.parents[0];
    accumulate(self, 0, [&](std::vector<double>& g) {
      const double s = self.grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = x.value.data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < k; ++j) {
          const double p = std::exp(row[j] - mx) / z;
          g[i * k + j] += s * (p - (static_cast<int>(j) == lab[i] ? 1.0 : 0.0));
        }
      }
    });
  }, "softmax_cross_entropy");
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets, std::span<const double> weights) {
  const auto n = logits.numel();
  if (targets.size() != n || weights.size() != n) throw ShapeError("bce_with_logits: size mismatch");
  auto lv = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) continue;
    const double x = lv[i];
    // log(1 + e^x) - t*x, written to avoid overflow
    loss += weights[i] * (std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x))));
  }
  std::vector<double> t(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return make_result({1}, {loss}, {logits}, [t = std::move(t), w = std::move(w)](hkd::detail::Node& self) {
    const auto& x = self.parents[0]->value;
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (w[i] == 0.0) continue;
        const double sig = 1.0 / (1.0 + std::exp(-x[i]));
        g[i] += self.grad[0] * w[i] * (sig - t[i]);
      }
    });
  }, "bce_with_logits");
}

Tensor sq_diff_sum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sq_diff_sum");
  auto av = a.data();
  auto bv = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  return make_result({1}, {s}, {a, b}, [](hkd::detail::Node& self) {
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    const double s = 2.0 * self.grad[0];
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (x[i] - y[i]);
    });
    accumulate(self, 1, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= s * (x[i] - y[i]);
    });
  }, "sq_diff_sum");
}

Tensor mse(const Tensor& a, const Tensor& b) {
  return scale(sq_diff_sum(a, b), 1.0 / static_cast<double>(a.numel()));
}

Tensor smooth_l1(const Tensor& pred, std::span<const double> targets, std::span<const double> weights) {
  const auto n = pred.numel();
  if (targets.size() != n || weights.size() != n) throw ShapeError("smooth_l1: size mismatch");
  auto pv = pred.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] != 0.0) loss += weights[i] * smooth_l1_value(pv[i] - targets[i]);
  }
  std::vector<double> t(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return make_result({1}, {loss}, {pred}, [t = std::move(t), w = std::move(w)](hkd::detail::Node& self) {
    const auto& x = self.parents[0]->value;
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (w[i] == 0.0) continue;
        const double d = x[i] - t[i];
        const double dd = std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
        g[i] += self.grad[0] * w[i] * dd;
      }
    });
  }, "smooth_l1");
}

}  // namespace hkd::ops
