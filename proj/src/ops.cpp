// SPDX-License-Identifier: Apache-2.0
#include "adanas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "adanas/errors.hpp"

namespace adanas {
namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank(const char* op, Var v, std::size_t rank) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(v.shape()));
  }
}

// Apply `fn(dst, grad_out)` to the gradient buffer of `in` when it is needed.
template <typename Fn>
void accumulate(Tape& t, Var in, Fn&& fn) {
  if (t.requires_grad(in)) fn(t.grad_buffer(in.id()).data());
}

template <typename F, typename DF>
Var unary(const char* name, Var a, F f, DF df) {
  Tensor out(a.shape());
  const auto x = a.value().data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[i]);
  return a.tape().record(name, std::move(out), {a}, [a, df](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    const auto x = t.value(a).data();
    const auto y = t.value(o).data();
    accumulate(t, a, [&](std::span<double> dx) {
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * df(x[i], y[i]);
    });
  });
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw DimensionError("axis out of range for shape " + shape_string(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  const auto x = a.value().data();
  const auto y = b.value().data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    accumulate(t, a, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    });
    accumulate(t, b, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    });
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  const auto x = a.value().data();
  const auto y = b.value().data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    accumulate(t, a, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    });
    accumulate(t, b, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    });
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  const auto x = a.value().data();
  const auto y = b.value().data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    const auto x = t.value(a).data();
    const auto y = t.value(b).data();
    accumulate(t, a, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
    });
    accumulate(t, b, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * x[i];
    });
  });
}

Var scale(Var a, double factor) {
  Tensor out(a.shape());
  const auto x = a.value().data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * factor;
  return a.tape().record("scale", std::move(out), {a}, [a, factor](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    accumulate(t, a, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * factor;
    });
  });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) throw ValidationError("log: non-positive input");
  }
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.tape().record("sum", Tensor::scalar(s), {a}, [a](Tape& t, std::size_t o) {
    const double g = t.grad(o)[0];
    accumulate(t, a, [&](std::span<double> d) {
      for (auto& v : d) v += g;
    });
  });
}

Var mean(Var a) {
  const auto n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [a](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    accumulate(t, a, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    });
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of no tensors");
  Shape out_shape = parts.front().shape();
  if (axis >= out_shape.size()) throw DimensionError("concat axis out of range");
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != parts.front().shape()[i]) {
        throw DimensionError("concat shape mismatch " + shape_string(s));
      }
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit whole = split_axis(out_shape, axis);
  Tensor out(out_shape);
  auto z = out.data();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(offset);
    const std::size_t width = p.shape()[axis] * whole.inner;
    const auto x = p.value().data();
    for (std::size_t o = 0; o < whole.outer; ++o) {
      std::copy_n(x.begin() + o * width, width, z.begin() + o * whole.n * whole.inner + offset);
    }
    offset += width;
  }
  return parts.front().tape().record(
      "concat", std::move(out), parts, [parts, offsets, whole, axis](Tape& t, std::size_t o) {
        const auto g = t.grad(o).data();
        for (std::size_t p = 0; p < parts.size(); ++p) {
          const std::size_t width = t.value(parts[p]).shape()[axis] * whole.inner;
          accumulate(t, parts[p], [&](std::span<double> d) {
            for (std::size_t r = 0; r < whole.outer; ++r) {
              const double* src = g.data() + r * whole.n * whole.inner + offsets[p];
              for (std::size_t i = 0; i < width; ++i) d[r * width + i] += src[i];
            }
          });
        }
      });
}

Var matmul(Var a, Var b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out({m, n});
  const auto x = a.value().data();
  const auto y = b.value().data();
  auto z = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      for (std::size_t j = 0; j < n; ++j) z[i * n + j] += xv * y[p * n + j];
    }
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    const auto x = t.value(a).data();
    const auto y = t.value(b).data();
    accumulate(t, a, [&](std::span<double> d) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * y[p * n + j];
          d[i * k + p] += s;
        }
    });
    accumulate(t, b, [&](std::span<double> d) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x[i * k + p];
          for (std::size_t j = 0; j < n; ++j) d[p * n + j] += xv * g[i * n + j];
        }
    });
  });
}

Var affine(Var x, Var weight, Var bias) {
  require_rank("affine", x, 2);
  require_rank("affine", weight, 2);
  require_rank("affine", bias, 1);
  const std::size_t B = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
  if (weight.shape()[1] != in || bias.shape()[0] != out_dim) {
    throw DimensionError("affine: weight " + shape_string(weight.shape()) + " bias " +
                         shape_string(bias.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
  }
  Tensor out({B, out_dim});
  const auto xv = x.value().data();
  const auto w = weight.value().data();
  const auto bv = bias.value().data();
  auto z = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = bv[o];
      for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * xv[b * in + i];
      z[b * out_dim + o] = s;
    }
  return x.tape().record(
      "affine", std::move(out), {x, weight, bias},
      [x, weight, bias, B, in, out_dim](Tape& t, std::size_t o) {
        const auto g = t.grad(o).data();
        const auto xv = t.value(x).data();
        const auto w = t.value(weight).data();
        accumulate(t, x, [&](std::span<double> d) {
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < out_dim; ++j) {
              const double gv = g[b * out_dim + j];
              for (std::size_t i = 0; i < in; ++i) d[b * in + i] += gv * w[j * in + i];
            }
        });
        accumulate(t, weight, [&](std::span<double> d) {
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < out_dim; ++j) {
              const double gv = g[b * out_dim + j];
              for (std::size_t i = 0; i < in; ++i) d[j * in + i] += gv * xv[b * in + i];
            }
        });
        accumulate(t, bias, [&](std::span<double> d) {
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < out_dim; ++j) d[j] += g[b * out_dim + j];
        });
      });
}

Var embedding(Var table, std::span<const int> ids, std::size_t batch, std::size_t length) {
  require_rank("embedding", table, 2);
  if (ids.size() != batch * length) {
    throw DimensionError("embedding: " + std::to_string(ids.size()) + " ids for batch " +
                         std::to_string(batch) + " x length " + std::to_string(length));
  }
  const std::size_t V = table.shape()[0], C = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw DimensionError("embedding: token id " + std::to_string(id) + " outside vocabulary of " +
                           std::to_string(V));
    }
  }
  Tensor out({batch, C, length});
  const auto w = table.value().data();
  auto z = out.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t l = 0; l < length; ++l) {
      const std::size_t row = static_cast<std::size_t>(ids[b * length + l]);
      for (std::size_t c = 0; c < C; ++c) z[(b * C + c) * length + l] = w[row * C + c];
    }
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape().record(
      "embedding", std::move(out), {table},
      [table, saved = std::move(saved), batch, length, C](Tape& t, std::size_t o) {
        const auto g = t.grad(o).data();
        accumulate(t, table, [&](std::span<double> d) {
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t l = 0; l < length; ++l) {
              const std::size_t row = static_cast<std::size_t>(saved[b * length + l]);
              for (std::size_t c = 0; c < C; ++c) d[row * C + c] += g[(b * C + c) * length + l];
            }
        });
      });
}

Var conv1d(Var input, Var kernel, std::size_t dilation) {
  require_rank("conv1d", input, 3);
  require_rank("conv1d", kernel, 3);
  const std::size_t B = input.shape()[0], Ci = input.shape()[1], L = input.shape()[2];
  const std::size_t Co = kernel.shape()[0], K = kernel.shape()[2];
  if (kernel.shape()[1] != Ci) {
    throw DimensionError("conv1d: kernel " + shape_string(kernel.shape()) + " expects " +
                         std::to_string(kernel.shape()[1]) + " input channels, got " +
                         std::to_string(Ci));
  }
  if (K % 2 == 0) throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(K));
  if (dilation < 1) throw ConfigError("conv1d: dilation must be >= 1");
  const auto pad = static_cast<std::ptrdiff_t>((K - 1) * dilation / 2);
  const auto len = static_cast<std::ptrdiff_t>(L);

  // Output position l reads input position l + off for tap t.
  auto tap_range = [=](std::size_t t) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(t * dilation) - pad;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(len, len - off);
    return std::tuple{off, lo, hi};
  };

  Tensor out({B, Co, L});
  const auto x = input.value().data();
  const auto w = kernel.value().data();
  auto z = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co) {
      double* zr = z.data() + (b * Co + co) * L;
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* xr = x.data() + (b * Ci + ci) * L;
        for (std::size_t t = 0; t < K; ++t) {
          const double wv = w[(co * Ci + ci) * K + t];
          const auto [off, lo, hi] = tap_range(t);
          for (std::ptrdiff_t l = lo; l < hi; ++l) zr[l] += wv * xr[l + off];
        }
      }
    }
  return input.tape().record(
      "conv1d", std::move(out), {input, kernel},
      [input, kernel, B, Ci, Co, K, L, tap_range](Tape& t, std::size_t o) {
        const auto g = t.grad(o).data();
        const auto x = t.value(input).data();
        const auto w = t.value(kernel).data();
        accumulate(t, input, [&](std::span<double> dx) {
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Co; ++co) {
              const double* gr = g.data() + (b * Co + co) * L;
              for (std::size_t ci = 0; ci < Ci; ++ci) {
                double* dr = dx.data() + (b * Ci + ci) * L;
                for (std::size_t tp = 0; tp < K; ++tp) {
                  const double wv = w[(co * Ci + ci) * K + tp];
                  const auto [off, lo, hi] = tap_range(tp);
                  for (std::ptrdiff_t l = lo; l < hi; ++l) dr[l + off] += wv * gr[l];
                }
              }
            }
        });
        accumulate(t, kernel, [&](std::span<double> dw) {
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Co; ++co) {
              const double* gr = g.data() + (b * Co + co) * L;
              for (std::size_t ci = 0; ci < Ci; ++ci) {
                const double* xr = x.data() + (b * Ci + ci) * L;
                for (std::size_t tp = 0; tp < K; ++tp) {
                  const auto [off, lo, hi] = tap_range(tp);
                  double s = 0.0;
                  for (std::ptrdiff_t l = lo; l < hi; ++l) s += gr[l] * xr[l + off];
                  dw[(co * Ci + ci) * K + tp] += s;
                }
              }
            }
        });
      });
}

Var add_channel_bias(Var x, Var bias) {
  require_rank("add_channel_bias", x, 3);
  require_rank("add_channel_bias", bias, 1);
  const std::size_t B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  if (bias.shape()[0] != C) throw DimensionError("add_channel_bias: channel mismatch");
  Tensor out = x.value();
  const auto bv = bias.value().data();
  auto z = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t l = 0; l < L; ++l) z[(b * C + c) * L + l] += bv[c];
  return x.tape().record("add_channel_bias", std::move(out), {x, bias},
                         [x, bias, B, C, L](Tape& t, std::size_t o) {
                           const auto g = t.grad(o).data();
                           accumulate(t, x, [&](std::span<double> d) {
                             for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                           });
                           accumulate(t, bias, [&](std::span<double> d) {
                             for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t c = 0; c < C; ++c)
                                 for (std::size_t l = 0; l < L; ++l) d[c] += g[(b * C + c) * L + l];
                           });
                         });
}

Var pool1d(Var input, PoolKind kind, std::size_t k) {
  require_rank("pool1d", input, 3);
  if (k % 2 == 0) throw ConfigError("pool1d: window must be odd");
  const std::size_t rows = input.shape()[0] * input.shape()[1], L = input.shape()[2];
  const std::size_t pad = (k - 1) / 2;
  Tensor out(input.shape());
  const auto x = input.value().data();
  auto z = out.data();
  if (kind == PoolKind::max) {
    std::vector<std::size_t> arg(rows * L);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t lo = l >= pad ? l - pad : 0, hi = std::min(L, l + pad + 1);
        std::size_t best = lo;
        for (std::size_t p = lo + 1; p < hi; ++p) {
          if (x[r * L + p] > x[r * L + best]) best = p;
        }
        arg[r * L + l] = best;
        z[r * L + l] = x[r * L + best];
      }
    return input.tape().record(
        "max_pool1d", std::move(out), {input},
        [input, arg = std::move(arg), rows, L](Tape& t, std::size_t o) {
          const auto g = t.grad(o).data();
          accumulate(t, input, [&](std::span<double> d) {
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t l = 0; l < L; ++l) d[r * L + arg[r * L + l]] += g[r * L + l];
          });
        });
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t lo = l >= pad ? l - pad : 0, hi = std::min(L, l + pad + 1);
      double s = 0.0;
      for (std::size_t p = lo; p < hi; ++p) s += x[r * L + p];
      z[r * L + l] = s / static_cast<double>(hi - lo);
    }
  return input.tape().record(
      "avg_pool1d", std::move(out), {input}, [input, rows, L, pad](Tape& t, std::size_t o) {
        const auto g = t.grad(o).data();
        accumulate(t, input, [&](std::span<double> d) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t l = 0; l < L; ++l) {
              const std::size_t lo = l >= pad ? l - pad : 0, hi = std::min(L, l + pad + 1);
              const double share = g[r * L + l] / static_cast<double>(hi - lo);
              for (std::size_t p = lo; p < hi; ++p) d[r * L + p] += share;
            }
        });
      });
}

Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats, BnMode mode) {
  require_rank("batchnorm", x, 3);
  const std::size_t B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  if (gamma.value().size() != C || beta.value().size() != C || stats.running_mean.size() != C ||
      stats.running_var.size() != C) {
    throw DimensionError("batchnorm: parameters do not match " + std::to_string(C) + " channels");
  }
  const std::size_t n = B * L;
  std::vector<double> mu(C), inv_std(C);
  if (mode == BnMode::train) {
    if (n < 2) {
      throw DegenerateError("batchnorm: train mode needs at least 2 values per channel, got " +
                            std::to_string(n));
    }
    const auto xv = x.value().data();
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) s += xv[(b * C + c) * L + l];
      const double m = s / static_cast<double>(n);
      double v = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
          const double d = xv[(b * C + c) * L + l] - m;
          v += d * d;
        }
      v /= static_cast<double>(n);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + BatchNormStats::eps);
      const double unbiased = v * static_cast<double>(n) / static_cast<double>(n - 1);
      stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * m;
      stats.running_var[c] =
          (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + BatchNormStats::eps);
    }
  }
  Tensor xhat(x.shape());
  Tensor out(x.shape());
  {
    const auto xv = x.value().data();
    const auto gv = gamma.value().data();
    const auto bv = beta.value().data();
    auto h = xhat.data();
    auto z = out.data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t i = (b * C + c) * L + l;
          h[i] = (xv[i] - mu[c]) * inv_std[c];
          z[i] = gv[c] * h[i] + bv[c];
        }
  }
  const bool train = mode == BnMode::train;
  return x.tape().record(
      train ? "batchnorm_train" : "batchnorm_eval", std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, L, n,
       train](Tape& t, std::size_t o) {
        const auto g = t.grad(o).data();
        const auto h = xhat.data();
        const auto gv = t.value(gamma).data();
        std::vector<double> sum_g(C, 0.0), sum_gh(C, 0.0);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t l = 0; l < L; ++l) {
              const std::size_t i = (b * C + c) * L + l;
              sum_g[c] += g[i];
              sum_gh[c] += g[i] * h[i];
            }
        accumulate(t, gamma, [&](std::span<double> d) {
          for (std::size_t c = 0; c < C; ++c) d[c] += sum_gh[c];
        });
        accumulate(t, beta, [&](std::span<double> d) {
          for (std::size_t c = 0; c < C; ++c) d[c] += sum_g[c];
        });
        accumulate(t, x, [&](std::span<double> d) {
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t l = 0; l < L; ++l) {
                const std::size_t i = (b * C + c) * L + l;
                if (train) {
                  d[i] += gv[c] * inv_std[c] *
                          (g[i] - inv_n * sum_g[c] - h[i] * inv_n * sum_gh[c]);
                } else {
                  d[i] += gv[c] * inv_std[c] * g[i];
                }
              }
        });
      });
}

Var softmax(Var x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor out(x.shape());
  const auto xv = x.value().data();
  auto z = out.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) m = std::max(m, xv[base + i * s.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double e = std::exp(xv[base + i * s.inner] - m);
        z[base + i * s.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < s.n; ++i) z[base + i * s.inner] /= total;
    }
  return x.tape().record("softmax", std::move(out), {x}, [x, s](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    const auto y = t.value(o).data();
    accumulate(t, x, [&](std::span<double> d) {
      for (std::size_t r = 0; r < s.outer; ++r)
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = r * s.n * s.inner + in;
          double dot = 0.0;
          for (std::size_t i = 0; i < s.n; ++i) dot += g[base + i * s.inner] * y[base + i * s.inner];
          for (std::size_t i = 0; i < s.n; ++i) {
            const std::size_t k = base + i * s.inner;
            d[k] += y[k] * (g[k] - dot);
          }
        }
    });
  });
}

Var log_softmax(Var x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor out(x.shape());
  const auto xv = x.value().data();
  auto z = out.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) m = std::max(m, xv[base + i * s.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) total += std::exp(xv[base + i * s.inner] - m);
      const double lse = m + std::log(total);
      for (std::size_t i = 0; i < s.n; ++i) z[base + i * s.inner] = xv[base + i * s.inner] - lse;
    }
  return x.tape().record("log_softmax", std::move(out), {x}, [x, s](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    const auto y = t.value(o).data();
    accumulate(t, x, [&](std::span<double> d) {
      for (std::size_t r = 0; r < s.outer; ++r)
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = r * s.n * s.inner + in;
          double gs = 0.0;
          for (std::size_t i = 0; i < s.n; ++i) gs += g[base + i * s.inner];
          for (std::size_t i = 0; i < s.n; ++i) {
            const std::size_t k = base + i * s.inner;
            d[k] += g[k] - std::exp(y[k]) * gs;
          }
        }
    });
  });
}

Var softmax_xent(Var logits, const Tensor& target) {
  require_rank("softmax_xent", logits, 2);
  if (target.shape() != logits.shape()) {
    throw DimensionError("softmax_xent: target " + shape_string(target.shape()) +
                         " does not match logits " + shape_string(logits.shape()));
  }
  const std::size_t B = logits.shape()[0], n = logits.shape()[1];
  if (B == 0) throw ValidationError("softmax_xent: empty batch");
  const auto tv = target.data();
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += tv[b * n + c];
    if (std::abs(s - 1.0) > 1e-6) {
      throw ValidationError("softmax_xent: target row " + std::to_string(b) + " sums to " +
                            std::to_string(s));
    }
  }
  const auto xv = logits.value().data();
  Tensor probs({B, n});
  auto p = probs.data();
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) m = std::max(m, xv[b * n + c]);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) total += std::exp(xv[b * n + c] - m);
    const double lse = m + std::log(total);
    for (std::size_t c = 0; c < n; ++c) {
      const double lp = xv[b * n + c] - lse;
      p[b * n + c] = std::exp(lp);
      if (tv[b * n + c] != 0.0) loss -= tv[b * n + c] * lp;
    }
  }
  loss /= static_cast<double>(B);
  return logits.tape().record(
      "softmax_xent", Tensor::scalar(loss), {logits},
      [logits, probs = std::move(probs), target, B, n](Tape& t, std::size_t o) {
        const double g = t.grad(o)[0] / static_cast<double>(B);
        const auto p = probs.data();
        const auto tv = target.data();
        accumulate(t, logits, [&](std::span<double> d) {
          for (std::size_t i = 0; i < B * n; ++i) d[i] += g * (p[i] - tv[i]);
        });
      });
}

Var weighted_sum(const std::vector<Var>& xs, Var weights) {
  if (xs.empty()) throw DimensionError("weighted_sum of no tensors");
  const Shape& shape = xs.front().shape();
  for (const Var& x : xs) require_same_shape("weighted_sum", xs.front(), x);
  const std::size_t count = xs.size();
  const Shape& ws = weights.shape();
  const bool per_row = ws.size() == 2;
  std::size_t rows = 1;
  if (per_row) {
    rows = ws[0];
    if (ws[1] != count || shape.empty() || shape[0] != rows) {
      throw DimensionError("weighted_sum: weights " + shape_string(ws) + " incompatible with " +
                           std::to_string(count) + " tensors of " + shape_string(shape));
    }
  } else if (ws.size() != 1 || ws[0] != count) {
    throw DimensionError("weighted_sum: weights " + shape_string(ws) + " for " +
                         std::to_string(count) + " tensors");
  }
  const std::size_t total = shape_numel(shape);
  const std::size_t per = total / rows;
  Tensor out(shape);
  auto z = out.data();
  const auto w = weights.value().data();
  for (std::size_t i = 0; i < count; ++i) {
    const auto x = xs[i].value().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double wv = per_row ? w[r * count + i] : w[i];
      if (wv == 0.0) continue;
      for (std::size_t k = 0; k < per; ++k) z[r * per + k] += wv * x[r * per + k];
    }
  }
  std::vector<Var> inputs = xs;
  inputs.push_back(weights);
  return weights.tape().record(
      "weighted_sum", std::move(out), inputs,
      [xs, weights, count, rows, per, per_row](Tape& t, std::size_t o) {
        const auto g = t.grad(o).data();
        const auto w = t.value(weights).data();
        for (std::size_t i = 0; i < count; ++i) {
          accumulate(t, xs[i], [&](std::span<double> d) {
            for (std::size_t r = 0; r < rows; ++r) {
              const double wv = per_row ? w[r * count + i] : w[i];
              for (std::size_t k = 0; k < per; ++k) d[r * per + k] += wv * g[r * per + k];
            }
          });
        }
        accumulate(t, weights, [&](std::span<double> d) {
          for (std::size_t i = 0; i < count; ++i) {
            const auto x = t.value(xs[i]).data();
            for (std::size_t r = 0; r < rows; ++r) {
              double s = 0.0;
              for (std::size_t k = 0; k < per; ++k) s += g[r * per + k] * x[r * per + k];
              d[per_row ? r * count + i : i] += s;
            }
          }
        });
      });
}

Var mean_positions(Var x) {
  require_rank("mean_positions", x, 3);
  const std::size_t B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  Tensor out({B, C});
  const auto xv = x.value().data();
  auto z = out.data();
  for (std::size_t r = 0; r < B * C; ++r) {
    double s = 0.0;
    for (std::size_t l = 0; l < L; ++l) s += xv[r * L + l];
    z[r] = s / static_cast<double>(L);
  }
  return x.tape().record("mean_positions", std::move(out), {x}, [x, B, C, L](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    accumulate(t, x, [&](std::span<double> d) {
      for (std::size_t r = 0; r < B * C; ++r) {
        const double share = g[r] / static_cast<double>(L);
        for (std::size_t l = 0; l < L; ++l) d[r * L + l] += share;
      }
    });
  });
}

Var contract_channels(Var x, Var u) {
  require_rank("contract_channels", x, 3);
  require_rank("contract_channels", u, 1);
  const std::size_t B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  if (u.shape()[0] != C) throw DimensionError("contract_channels: channel mismatch");
  Tensor out({B, L});
  const auto xv = x.value().data();
  const auto uv = u.value().data();
  auto z = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t l = 0; l < L; ++l) z[b * L + l] += uv[c] * xv[(b * C + c) * L + l];
  return x.tape().record(
      "contract_channels", std::move(out), {x, u}, [x, u, B, C, L](Tape& t, std::size_t o) {
        const auto g = t.grad(o).data();
        const auto xv = t.value(x).data();
        const auto uv = t.value(u).data();
        accumulate(t, x, [&](std::span<double> d) {
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t l = 0; l < L; ++l) d[(b * C + c) * L + l] += uv[c] * g[b * L + l];
        });
        accumulate(t, u, [&](std::span<double> d) {
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t l = 0; l < L; ++l) d[c] += g[b * L + l] * xv[(b * C + c) * L + l];
        });
      });
}

Var attend_positions(Var x, Var a) {
  require_rank("attend_positions", x, 3);
  require_rank("attend_positions", a, 2);
  const std::size_t B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  if (a.shape()[0] != B || a.shape()[1] != L) {
    throw DimensionError("attend_positions: weights " + shape_string(a.shape()) +
                         " incompatible with " + shape_string(x.shape()));
  }
  Tensor out({B, C});
  const auto xv = x.value().data();
  const auto av = a.value().data();
  auto z = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t l = 0; l < L; ++l) s += av[b * L + l] * xv[(b * C + c) * L + l];
      z[b * C + c] = s;
    }
  return x.tape().record(
      "attend_positions", std::move(out), {x, a}, [x, a, B, C, L](Tape& t, std::size_t o) {
        const auto g = t.grad(o).data();
        const auto xv = t.value(x).data();
        const auto av = t.value(a).data();
        accumulate(t, x, [&](std::span<double> d) {
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t l = 0; l < L; ++l) d[(b * C + c) * L + l] += av[b * L + l] * g[b * C + c];
        });
        accumulate(t, a, [&](std::span<double> d) {
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t l = 0; l < L; ++l) d[b * L + l] += g[b * C + c] * xv[(b * C + c) * L + l];
        });
      });
}

Var straight_through(Var y) {
  require_rank("straight_through", y, 1);
  if (y.value().empty()) throw DimensionError("straight_through of an empty vector");
  Tensor out(y.shape());
  out[argmax(y.value().data())] = 1.0;
  return y.tape().record("straight_through", std::move(out), {y}, [y](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    accumulate(t, y, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    });
  });
}

Var row(Var m, std::size_t index) {
  require_rank("row", m, 2);
  const std::size_t R = m.shape()[0], n = m.shape()[1];
  if (index >= R) throw DimensionError("row: index out of range");
  const auto src = m.value().data().subspan(index * n, n);
  Tensor out(Shape{n}, std::vector<double>(src.begin(), src.end()));
  return m.tape().record("row", std::move(out), {m}, [m, index, n](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    accumulate(t, m, [&](std::span<double> d) {
      for (std::size_t i = 0; i < n; ++i) d[index * n + i] += g[i];
    });
  });
}

Var select(Var v, std::size_t index) {
  if (index >= v.value().size()) throw DimensionError("select: index out of range");
  return v.tape().record("select", Tensor::scalar(v.value()[index]), {v},
                         [v, index](Tape& t, std::size_t o) {
                           const double g = t.grad(o)[0];
                           accumulate(t, v, [&](std::span<double> d) { d[index] += g; });
                         });
}

Var scale_by(Var x, Var s) {
  if (s.value().size() != 1) throw DimensionError("scale_by: factor must have one element");
  const double f = s.value()[0];
  Tensor out(x.shape());
  const auto xv = x.value().data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = xv[i] * f;
  return x.tape().record("scale_by", std::move(out), {x, s}, [x, s](Tape& t, std::size_t o) {
    const auto g = t.grad(o).data();
    const double f = t.value(s)[0];
    const auto xv = t.value(x).data();
    accumulate(t, x, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * f;
    });
    accumulate(t, s, [&](std::span<double> d) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      d[0] += acc;
    });
  });
}

}  // namespace adanas
