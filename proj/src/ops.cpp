#include "edulm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "edulm/error.hpp"

namespace edulm {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Gradient buffer of input i, or nullptr if that input does not need one.
template <typename T>
T *input_grad(TensorNode<T> &self, std::size_t i) {
    auto &in = self.inputs[i];
    return in && in->requires_grad ? in->grad_buffer().data() : nullptr;
}

template <typename T>
void require_rank(const Tensor<T> &t, std::size_t rank, const char *op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(t.shape()));
    }
}

template <typename T>
void require_same_shape(const Tensor<T> &a, const Tensor<T> &b, const char *op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    }
}

template <typename T>
std::vector<T> transposed(const T *src, std::size_t rows, std::size_t cols) {
    std::vector<T> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    return out;
}

template <typename T>
T gaussian_cdf(T x) {
    return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gaussian_pdf(T x) {
    return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

template <typename T>
constexpr T kGeluTanhScale = T(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluTanhCubic = T(0.044715);

}  // namespace

template <typename T>
void gemm(const T *a, const T *b, T *c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        T *__restrict crow = c + i * n;
        if (!accumulate) {
            std::fill(crow, crow + n, T(0));
        }
        const T *arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T *__restrict brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions disagree " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
    }
    std::vector<T> out(m * n);
    gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    return Tensor<T>::from_op("matmul", {m, n}, std::move(out), {a.node(), b.node()},
                              [m, k, n](TensorNode<T> &self) {
                                  const T *dout = self.grad.data();
                                  if (T *da = input_grad(self, 0)) {
                                      const auto bt = transposed(self.inputs[1]->data.data(), k, n);
                                      gemm(dout, bt.data(), da, m, n, k, true);
                                  }
                                  if (T *db = input_grad(self, 1)) {
                                      const auto at = transposed(self.inputs[0]->data.data(), m, k);
                                      gemm(at.data(), dout, db, k, m, n, true);
                                  }
                              });
}

template <typename T>
Tensor<T> transpose(const Tensor<T> &a) {
    require_rank(a, 2, "transpose");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    return Tensor<T>::from_op("transpose", {cols, rows}, transposed(a.data().data(), rows, cols), {a.node()},
                              [rows, cols](TensorNode<T> &self) {
                                  T *da = input_grad(self, 0);
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      for (std::size_t c = 0; c < cols; ++c) {
                                          da[r * cols + c] += self.grad[c * rows + r];
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> reshape(const Tensor<T> &a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_to_string(a.shape()) + " as " + shape_to_string(shape));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    return Tensor<T>::from_op("reshape", std::move(shape), std::move(out), {a.node()}, [](TensorNode<T> &self) {
        T *da = input_grad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            da[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
    require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] + y[i];
    }
    return Tensor<T>::from_op("add", a.shape(), std::move(out), {a.node(), b.node()}, [](TensorNode<T> &self) {
        for (std::size_t side = 0; side < 2; ++side) {
            if (T *d = input_grad(self, side)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    d[i] += self.grad[i];
                }
            }
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b) {
    require_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] - y[i];
    }
    return Tensor<T>::from_op("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](TensorNode<T> &self) {
        if (T *da = input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                da[i] += self.grad[i];
            }
        }
        if (T *db = input_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                db[i] -= self.grad[i];
            }
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
    require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    return Tensor<T>::from_op("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](TensorNode<T> &self) {
        const auto &x = self.inputs[0]->data;
        const auto &y = self.inputs[1]->data;
        if (T *da = input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                da[i] += self.grad[i] * y[i];
            }
        }
        if (T *db = input_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                db[i] += self.grad[i] * x[i];
            }
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T> &a, T factor) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (T &v : out) {
        v *= factor;
    }
    return Tensor<T>::from_op("scale", a.shape(), std::move(out), {a.node()}, [factor](TensorNode<T> &self) {
        T *da = input_grad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            da[i] += self.grad[i] * factor;
        }
    });
}

template <typename T>
Tensor<T> add_row_bias(const Tensor<T> &x, const Tensor<T> &bias) {
    require_rank(x, 2, "add_row_bias");
    require_rank(bias, 1, "add_row_bias");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (bias.dim(0) != cols) {
        throw ShapeError("add_row_bias: bias " + shape_to_string(bias.shape()) + " vs input " +
                         shape_to_string(x.shape()));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    const auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] += b[c];
        }
    }
    return Tensor<T>::from_op("add_row_bias", x.shape(), std::move(out), {x.node(), bias.node()},
                              [rows, cols](TensorNode<T> &self) {
                                  if (T *dx = input_grad(self, 0)) {
                                      for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                          dx[i] += self.grad[i];
                                      }
                                  }
                                  if (T *db = input_grad(self, 1)) {
                                      for (std::size_t r = 0; r < rows; ++r) {
                                          for (std::size_t c = 0; c < cols; ++c) {
                                              db[c] += self.grad[r * cols + c];
                                          }
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> linear(const Tensor<T> &x, const Tensor<T> &weight, const Tensor<T> &bias) {
    require_rank(x, 2, "linear");
    require_rank(weight, 2, "linear");
    require_rank(bias, 1, "linear");
    const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
    if (weight.dim(0) != k || bias.dim(0) != n) {
        throw ShapeError("linear: input " + shape_to_string(x.shape()) + ", weight " +
                         shape_to_string(weight.shape()) + ", bias " + shape_to_string(bias.shape()));
    }
    std::vector<T> out(m * n);
    const auto b = bias.data();
    for (std::size_t r = 0; r < m; ++r) {
        std::copy(b.begin(), b.end(), out.begin() + static_cast<std::ptrdiff_t>(r * n));
    }
    gemm(x.data().data(), weight.data().data(), out.data(), m, k, n, true);
    return Tensor<T>::from_op("linear", {m, n}, std::move(out), {x.node(), weight.node(), bias.node()},
                              [m, k, n](TensorNode<T> &self) {
                                  const T *dout = self.grad.data();
                                  if (T *dx = input_grad(self, 0)) {
                                      const auto wt = transposed(self.inputs[1]->data.data(), k, n);
                                      gemm(dout, wt.data(), dx, m, n, k, true);
                                  }
                                  if (T *dw = input_grad(self, 1)) {
                                      const auto xt = transposed(self.inputs[0]->data.data(), m, k);
                                      gemm(xt.data(), dout, dw, k, m, n, true);
                                  }
                                  if (T *db = input_grad(self, 2)) {
                                      for (std::size_t r = 0; r < m; ++r) {
                                          for (std::size_t c = 0; c < n; ++c) {
                                              db[c] += dout[r * n + c];
                                          }
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> gelu(const Tensor<T> &x, GeluMode mode) {
    std::vector<T> out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = in[i];
        if (mode == GeluMode::exact) {
            out[i] = v * gaussian_cdf(v);
        } else {
            const T inner = kGeluTanhScale<T> * (v + kGeluTanhCubic<T> * v * v * v);
            out[i] = T(0.5) * v * (T(1) + std::tanh(inner));
        }
    }
    return Tensor<T>::from_op("gelu", x.shape(), std::move(out), {x.node()}, [mode](TensorNode<T> &self) {
        T *dx = input_grad(self, 0);
        const auto &in = self.inputs[0]->data;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T v = in[i];
            T d;
            if (mode == GeluMode::exact) {
                d = gaussian_cdf(v) + v * gaussian_pdf(v);
            } else {
                const T inner = kGeluTanhScale<T> * (v + kGeluTanhCubic<T> * v * v * v);
                const T t = std::tanh(inner);
                d = T(0.5) * (T(1) + t) +
                    T(0.5) * v * (T(1) - t * t) * kGeluTanhScale<T> * (T(1) + T(3) * kGeluTanhCubic<T> * v * v);
            }
            dx[i] += self.grad[i] * d;
        }
    });
}

template <typename T>
Tensor<T> tanh(const Tensor<T> &x) {
    std::vector<T> out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::tanh(in[i]);
    }
    return Tensor<T>::from_op("tanh", x.shape(), std::move(out), {x.node()}, [](TensorNode<T> &self) {
        T *dx = input_grad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T y = self.data[i];
            dx[i] += self.grad[i] * (T(1) - y * y);
        }
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T> &x, std::size_t axis) {
    const Shape &shape = x.shape();
    if (axis >= shape.size()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_to_string(shape));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= shape[i];
    }
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        inner *= shape[i];
    }
    const std::size_t n = shape[axis];
    const auto in = x.data();
    for (const T v : in) {
        if (!std::isfinite(v)) {
            throw NumericError("softmax: non-finite input");
        }
    }
    std::vector<T> out(in.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            T peak = in[base];
            for (std::size_t j = 1; j < n; ++j) {
                peak = std::max(peak, in[base + j * inner]);
            }
            T total = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const T e = std::exp(in[base + j * inner] - peak);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < n; ++j) {
                out[base + j * inner] /= total;
            }
        }
    }
    return Tensor<T>::from_op("softmax", shape, std::move(out), {x.node()},
                              [outer, inner, n](TensorNode<T> &self) {
                                  T *dx = input_grad(self, 0);
                                  const auto &y = self.data;
                                  const auto &g = self.grad;
                                  for (std::size_t o = 0; o < outer; ++o) {
                                      for (std::size_t i = 0; i < inner; ++i) {
                                          const std::size_t base = o * n * inner + i;
                                          T dot = 0;
                                          for (std::size_t j = 0; j < n; ++j) {
                                              dot += g[base + j * inner] * y[base + j * inner];
                                          }
                                          for (std::size_t j = 0; j < n; ++j) {
                                              const std::size_t at = base + j * inner;
                                              dx[at] += y[at] * (g[at] - dot);
                                          }
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T> &x) {
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    const auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T *row = in.data() + r * n;
        const T peak = *std::max_element(row, row + n);
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
            total += std::exp(row[j] - peak);
        }
        const T log_norm = peak + std::log(total);
        for (std::size_t j = 0; j < n; ++j) {
            out[r * n + j] = row[j] - log_norm;
        }
    }
    return Tensor<T>::from_op("log_softmax", x.shape(), std::move(out), {x.node()}, [rows, n](TensorNode<T> &self) {
        T *dx = input_grad(self, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            T gsum = 0;
            for (std::size_t j = 0; j < n; ++j) {
                gsum += self.grad[r * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t at = r * n + j;
                dx[at] += self.grad[at] - std::exp(self.data[at]) * gsum;
            }
        }
    });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gain, const Tensor<T> &bias, double eps) {
    require_rank(gain, 1, "layer_norm");
    require_rank(bias, 1, "layer_norm");
    const std::size_t d = x.shape().back();
    if (gain.dim(0) != d || bias.dim(0) != d) {
        throw ShapeError("layer_norm: gain/bias must match last dimension of " + shape_to_string(x.shape()));
    }
    if (!(eps > 0)) {
        throw ConfigError("layer_norm: eps must be positive");
    }
    const std::size_t rows = x.numel() / d;
    const auto in = x.data(), g = gain.data(), b = bias.data();
    std::vector<T> out(in.size()), normed(in.size()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T *row = in.data() + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) {
            mu += row[j];
        }
        mu /= T(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const T c = row[j] - mu;
            var += c * c;
        }
        var /= T(d);
        const T rstd = T(1) / std::sqrt(var + T(eps));
        inv_std[r] = rstd;
        for (std::size_t j = 0; j < d; ++j) {
            const T nv = (row[j] - mu) * rstd;
            normed[r * d + j] = nv;
            out[r * d + j] = nv * g[j] + b[j];
        }
    }
    return Tensor<T>::from_op(
        "layer_norm", x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
        [rows, d, normed = std::move(normed), inv_std = std::move(inv_std)](TensorNode<T> &self) {
            const auto &g = self.inputs[1]->data;
            const T *dy = self.grad.data();
            if (T *dg = input_grad(self, 1)) {
                for (std::size_t i = 0; i < rows * d; ++i) {
                    dg[i % d] += dy[i] * normed[i];
                }
            }
            if (T *db = input_grad(self, 2)) {
                for (std::size_t i = 0; i < rows * d; ++i) {
                    db[i % d] += dy[i];
                }
            }
            if (T *dx = input_grad(self, 0)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dn = 0, mean_dn_n = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dn = dy[r * d + j] * g[j];
                        mean_dn += dn;
                        mean_dn_n += dn * normed[r * d + j];
                    }
                    mean_dn /= T(d);
                    mean_dn_n /= T(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dn = dy[r * d + j] * g[j];
                        dx[r * d + j] += inv_std[r] * (dn - mean_dn - normed[r * d + j] * mean_dn_n);
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> dropout(const Tensor<T> &x, double rate, Rng &rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout rate must lie in [0,1)");
    }
    if (rate == 0.0) {
        return x;
    }
    const T keep_scale = T(1.0 / (1.0 - rate));
    std::vector<T> mask(x.numel());
    for (T &m : mask) {
        m = rng.uniform() < rate ? T(0) : keep_scale;
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= mask[i];
    }
    return Tensor<T>::from_op("dropout", x.shape(), std::move(out), {x.node()},
                              [mask = std::move(mask)](TensorNode<T> &self) {
                                  T *dx = input_grad(self, 0);
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                      dx[i] += self.grad[i] * mask[i];
                                  }
                              });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T> &table, std::span<const std::size_t> indices) {
    require_rank(table, 2, "gather_rows");
    if (indices.empty()) {
        throw ShapeError("gather_rows: no indices");
    }
    const std::size_t rows = table.dim(0), cols = table.dim(1);
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    std::vector<T> out(idx.size() * cols);
    const auto src = table.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= rows) {
            throw InputError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                             std::to_string(rows) + " rows");
        }
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * cols), cols,
                    out.begin() + static_cast<std::ptrdiff_t>(i * cols));
    }
    const std::size_t n = idx.size();
    return Tensor<T>::from_op("gather_rows", {n, cols}, std::move(out), {table.node()},
                              [cols, idx = std::move(idx)](TensorNode<T> &self) {
                                  T *dt = input_grad(self, 0);
                                  for (std::size_t i = 0; i < idx.size(); ++i) {
                                      T *dst = dt + idx[i] * cols;
                                      const T *g = self.grad.data() + i * cols;
                                      for (std::size_t c = 0; c < cols; ++c) {
                                          dst[c] += g[c];
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> sum(const Tensor<T> &x) {
    T total = 0;
    for (const T v : x.data()) {
        total += v;
    }
    return Tensor<T>::from_op("sum", {1}, {total}, {x.node()}, [](TensorNode<T> &self) {
        T *dx = input_grad(self, 0);
        const std::size_t n = self.inputs[0]->data.size();
        for (std::size_t i = 0; i < n; ++i) {
            dx[i] += self.grad[0];
        }
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T> &x) {
    return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> cosine_similarity_rows(const Tensor<T> &a, const Tensor<T> &b) {
    require_rank(a, 2, "cosine_similarity_rows");
    require_same_shape(a, b, "cosine_similarity_rows");
    const std::size_t n = a.dim(0), d = a.dim(1);
    const auto x = a.data(), y = b.data();
    std::vector<T> out(n), norm_a(n), norm_b(n);
    for (std::size_t r = 0; r < n; ++r) {
        T dot = 0, aa = 0, bb = 0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += x[r * d + j] * y[r * d + j];
            aa += x[r * d + j] * x[r * d + j];
            bb += y[r * d + j] * y[r * d + j];
        }
        if (aa == T(0) || bb == T(0)) {
            throw NumericError("cosine similarity of a zero-norm vector (row " + std::to_string(r) + ")");
        }
        norm_a[r] = std::sqrt(aa);
        norm_b[r] = std::sqrt(bb);
        out[r] = dot / (norm_a[r] * norm_b[r]);
    }
    return Tensor<T>::from_op(
        "cosine_similarity_rows", {n}, std::move(out), {a.node(), b.node()},
        [n, d, norm_a = std::move(norm_a), norm_b = std::move(norm_b)](TensorNode<T> &self) {
            const auto &x = self.inputs[0]->data;
            const auto &y = self.inputs[1]->data;
            T *da = input_grad(self, 0);
            T *db = input_grad(self, 1);
            for (std::size_t r = 0; r < n; ++r) {
                const T g = self.grad[r];
                const T c = self.data[r];
                const T inv_ab = T(1) / (norm_a[r] * norm_b[r]);
                for (std::size_t j = 0; j < d; ++j) {
                    const std::size_t at = r * d + j;
                    if (da) {
                        da[at] += g * (y[at] * inv_ab - c * x[at] / (norm_a[r] * norm_a[r]));
                    }
                    if (db) {
                        db[at] += g * (x[at] * inv_ab - c * y[at] / (norm_b[r] * norm_b[r]));
                    }
                }
            }
        });
}

template <typename T>
CrossEntropyResult<T> cross_entropy(const Tensor<T> &logits, std::span<const std::int32_t> targets,
                                    std::int32_t ignore_index) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != n) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                         " rows");
    }
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    std::size_t counted = 0;
    for (const std::int32_t t : tgt) {
        if (t == ignore_index) {
            continue;
        }
        if (t < 0 || static_cast<std::size_t>(t) >= v) {
            throw InputError("cross_entropy: target " + std::to_string(t) + " outside [0," + std::to_string(v) +
                             ")");
        }
        ++counted;
    }
    const auto in = logits.data();
    std::vector<T> probs(in.size());
    T total_nll = 0;
    for (std::size_t r = 0; r < n; ++r) {
        const T *row = in.data() + r * v;
        const T peak = *std::max_element(row, row + v);
        T z = 0;
        for (std::size_t j = 0; j < v; ++j) {
            probs[r * v + j] = std::exp(row[j] - peak);
            z += probs[r * v + j];
        }
        for (std::size_t j = 0; j < v; ++j) {
            probs[r * v + j] /= z;
        }
        if (tgt[r] != ignore_index) {
            total_nll -= row[tgt[r]] - peak - std::log(z);
        }
    }
    const T loss = counted > 0 ? total_nll / T(counted) : T(0);
    Tensor<T> out = Tensor<T>::from_op(
        "cross_entropy", {1}, {loss}, {logits.node()},
        [n, v, counted, ignore_index, tgt = std::move(tgt), probs = std::move(probs)](TensorNode<T> &self) {
            if (counted == 0) {
                return;
            }
            T *dx = input_grad(self, 0);
            const T g = self.grad[0] / T(counted);
            for (std::size_t r = 0; r < n; ++r) {
                if (tgt[r] == ignore_index) {
                    continue;
                }
                for (std::size_t j = 0; j < v; ++j) {
                    dx[r * v + j] += g * probs[r * v + j];
                }
                dx[r * v + static_cast<std::size_t>(tgt[r])] -= g;
            }
        });
    return {std::move(out), counted};
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T> &q, const Tensor<T> &k, const Tensor<T> &v,
                               std::span<const std::uint8_t> key_mask, std::size_t batch, std::size_t seq_len,
                               std::size_t num_heads) {
    require_rank(q, 2, "attention");
    require_same_shape(q, k, "attention");
    require_same_shape(q, v, "attention");
    const std::size_t rows = q.dim(0), hidden = q.dim(1);
    if (rows != batch * seq_len || key_mask.size() != rows) {
        throw ShapeError("attention: " + std::to_string(rows) + " rows, mask of " + std::to_string(key_mask.size()) +
                         ", batch " + std::to_string(batch) + " x seq " + std::to_string(seq_len));
    }
    if (num_heads == 0 || hidden % num_heads != 0) {
        throw ShapeError("attention: hidden size not divisible by head count");
    }
    std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());
    for (std::size_t b = 0; b < batch; ++b) {
        const auto first = mask.begin() + static_cast<std::ptrdiff_t>(b * seq_len);
        if (std::none_of(first, first + static_cast<std::ptrdiff_t>(seq_len), [](std::uint8_t m) { return m != 0; })) {
            throw NumericError("attention: every key position is masked in sequence " + std::to_string(b));
        }
    }
    const std::size_t dh = hidden / num_heads;
    const T inv_sqrt = T(1) / std::sqrt(T(dh));
    const auto qd = q.data(), kd = k.data(), vd = v.data();
    std::vector<T> probs(batch * num_heads * seq_len * seq_len);
    std::vector<T> out(rows * hidden, T(0));
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < num_heads; ++h) {
            T *p = probs.data() + (b * num_heads + h) * seq_len * seq_len;
            for (std::size_t i = 0; i < seq_len; ++i) {
                const T *qi = qd.data() + (b * seq_len + i) * hidden + h * dh;
                T *prow = p + i * seq_len;
                T peak = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < seq_len; ++j) {
                    const T *kj = kd.data() + (b * seq_len + j) * hidden + h * dh;
                    T s = 0;
                    for (std::size_t e = 0; e < dh; ++e) {
                        s += qi[e] * kj[e];
                    }
                    s *= inv_sqrt;
                    if (mask[b * seq_len + j] == 0) {
                        s += T(kMaskBias);
                    }
                    prow[j] = s;
                    peak = std::max(peak, s);
                }
                T z = 0;
                for (std::size_t j = 0; j < seq_len; ++j) {
                    prow[j] = std::exp(prow[j] - peak);
                    z += prow[j];
                }
                T *oi = out.data() + (b * seq_len + i) * hidden + h * dh;
                for (std::size_t j = 0; j < seq_len; ++j) {
                    prow[j] /= z;
                    const T *vj = vd.data() + (b * seq_len + j) * hidden + h * dh;
                    for (std::size_t e = 0; e < dh; ++e) {
                        oi[e] += prow[j] * vj[e];
                    }
                }
            }
        }
    }
    return Tensor<T>::from_op(
        "attention", {rows, hidden}, std::move(out), {q.node(), k.node(), v.node()},
        [batch, seq_len, num_heads, hidden, dh, inv_sqrt, probs = std::move(probs)](TensorNode<T> &self) {
            const auto &qd = self.inputs[0]->data;
            const auto &kd = self.inputs[1]->data;
            const auto &vd = self.inputs[2]->data;
            T *dq = input_grad(self, 0);
            T *dk = input_grad(self, 1);
            T *dv = input_grad(self, 2);
            std::vector<T> dp(seq_len);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < num_heads; ++h) {
                    const T *p = probs.data() + (b * num_heads + h) * seq_len * seq_len;
                    for (std::size_t i = 0; i < seq_len; ++i) {
                        const T *go = self.grad.data() + (b * seq_len + i) * hidden + h * dh;
                        const T *prow = p + i * seq_len;
                        T dot = 0;
                        for (std::size_t j = 0; j < seq_len; ++j) {
                            const std::size_t jrow = (b * seq_len + j) * hidden + h * dh;
                            T acc = 0;
                            for (std::size_t e = 0; e < dh; ++e) {
                                acc += go[e] * vd[jrow + e];
                            }
                            dp[j] = acc;
                            dot += acc * prow[j];
                            if (dv) {
                                for (std::size_t e = 0; e < dh; ++e) {
                                    dv[jrow + e] += prow[j] * go[e];
                                }
                            }
                        }
                        const std::size_t irow = (b * seq_len + i) * hidden + h * dh;
                        for (std::size_t j = 0; j < seq_len; ++j) {
                            const T ds = prow[j] * (dp[j] - dot) * inv_sqrt;
                            if (ds == T(0)) {
                                continue;
                            }
                            const std::size_t jrow = (b * seq_len + j) * hidden + h * dh;
                            if (dq) {
                                for (std::size_t e = 0; e < dh; ++e) {
                                    dq[irow + e] += ds * kd[jrow + e];
                                }
                            }
                            if (dk) {
                                for (std::size_t e = 0; e < dh; ++e) {
                                    dk[jrow + e] += ds * qd[irow + e];
                                }
                            }
                        }
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> attention(const Tensor<T> &q, const Tensor<T> &k, const Tensor<T> &v, std::span<const std::uint8_t> mask) {
    require_rank(q, 2, "attention");
    return multi_head_attention(q, k, v, mask, 1, q.dim(0), 1);
}

#define EDULM_INSTANTIATE_OPS(T)                                                                                    \
    template void gemm<T>(const T *, const T *, T *, std::size_t, std::size_t, std::size_t, bool);                  \
    template Tensor<T> matmul(const Tensor<T> &, const Tensor<T> &);                                                \
    template Tensor<T> transpose(const Tensor<T> &);                                                                \
    template Tensor<T> reshape(const Tensor<T> &, Shape);                                                           \
    template Tensor<T> add(const Tensor<T> &, const Tensor<T> &);                                                   \
    template Tensor<T> sub(const Tensor<T> &, const Tensor<T> &);                                                   \
    template Tensor<T> mul(const Tensor<T> &, const Tensor<T> &);                                                   \
    template Tensor<T> scale(const Tensor<T> &, T);                                                                 \
    template Tensor<T> add_row_bias(const Tensor<T> &, const Tensor<T> &);                                          \
    template Tensor<T> linear(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &);                             \
    template Tensor<T> gelu(const Tensor<T> &, GeluMode);                                                           \
    template Tensor<T> tanh(const Tensor<T> &);                                                                     \
    template Tensor<T> softmax(const Tensor<T> &, std::size_t);                                                     \
    template Tensor<T> log_softmax(const Tensor<T> &);                                                              \
    template Tensor<T> layer_norm(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, double);                 \
    template Tensor<T> dropout(const Tensor<T> &, double, Rng &);                                                   \
    template Tensor<T> gather_rows(const Tensor<T> &, std::span<const std::size_t>);                                \
    template Tensor<T> sum(const Tensor<T> &);                                                                      \
    template Tensor<T> mean(const Tensor<T> &);                                                                     \
    template Tensor<T> cosine_similarity_rows(const Tensor<T> &, const Tensor<T> &);                                \
    template CrossEntropyResult<T> cross_entropy(const Tensor<T> &, std::span<const std::int32_t>, std::int32_t);   \
    template Tensor<T> attention(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &,                           \
                                 std::span<const std::uint8_t>);                                                    \
    template Tensor<T> multi_head_attention(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &,                \
                                            std::span<const std::uint8_t>, std::size_t, std::size_t, std::size_t);

EDULM_INSTANTIATE_OPS(float)
EDULM_INSTANTIATE_OPS(double)

#undef EDULM_INSTANTIATE_OPS

}  // namespace edulm
