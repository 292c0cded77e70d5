#include "mosformer/ops.hpp"

#include <cmath>
#include <cstring>

#include "mosformer/kernels.hpp"

namespace mosf {

namespace {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape()) throw DimensionError(std::string(what) + ": operand shapes differ");
}

template <typename T>
void accum(std::vector<T>& dst, const T* src, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <typename T>
void accum_range(T* dst, const T* src, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            accum(an->grad, o.grad.data(), o.grad.size());
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            accum(bn->grad, o.grad.data(), o.grad.size());
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            accum(an->grad, o.grad.data(), o.grad.size());
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->data[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto an = a.node();
    return make_op<T>(a.shape(), std::move(out), {a}, [an, c](detail::Node<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * c;
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    auto an = a.node();
    return make_op<T>(a.shape(), std::move(out), {a}, [an](detail::Node<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            if (an->data[i] > T(0)) an->grad[i] += o.grad[i];
    });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = static_cast<double>(a.data()[i]);
        out[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * kInvSqrt2)));
    }
    auto an = a.node();
    return make_op<T>(a.shape(), std::move(out), {a}, [an](detail::Node<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double x = static_cast<double>(an->data[i]);
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            an->grad[i] += o.grad[i] * static_cast<T>(cdf + x * pdf);
        }
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.size()) throw DimensionError("reshape: element count changes");
    std::vector<T> out = a.data();
    auto an = a.node();
    return make_op<T>(std::move(new_shape), std::move(out), {a}, [an](detail::Node<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        accum(an->grad, o.grad.data(), o.grad.size());
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t dim) {
    if (parts.empty()) throw InputError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (dim >= s0.size()) throw DimensionError("concat: dim out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < dim; ++i) outer *= s0[i];
    for (std::size_t i = dim + 1; i < s0.size(); ++i) inner *= s0[i];
    std::size_t cat_extent = 0;
    for (const auto& p : parts) {
        if (p.rank() != s0.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < s0.size(); ++i)
            if (i != dim && p.shape()[i] != s0[i]) throw DimensionError("concat: extent mismatch off the concat dim");
        cat_extent += p.shape()[dim];
    }
    Shape out_shape = s0;
    out_shape[dim] = cat_extent;
    std::vector<T> out(outer * cat_extent * inner);
    std::vector<std::size_t> offsets(parts.size());
    {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            offsets[pi] = off;
            const std::size_t ext = parts[pi].shape()[dim];
            const T* src = parts[pi].data().data();
            for (std::size_t o = 0; o < outer; ++o) {
                std::memcpy(out.data() + (o * cat_extent + off) * inner, src + o * ext * inner,
                            ext * inner * sizeof(T));
            }
            off += ext;
        }
    }
    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        extents.push_back(p.shape()[dim]);
    }
    return make_op<T>(std::move(out_shape), std::move(out), parts,
                      [nodes, extents, offsets, outer, inner, cat_extent](detail::Node<T>& o) {
                          for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                              auto& pn = *nodes[pi];
                              if (!pn.requires_grad) continue;
                              pn.ensure_grad();
                              const std::size_t ext = extents[pi];
                              for (std::size_t ou = 0; ou < outer; ++ou) {
                                  const T* g = o.grad.data() + (ou * cat_extent + offsets[pi]) * inner;
                                  T* dst = pn.grad.data() + ou * ext * inner;
                                  accum_range(dst, g, ext * inner);
                              }
                          }
                      });
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& a, std::size_t dim, std::size_t start, std::size_t len) {
    const Shape& s = a.shape();
    if (dim >= s.size()) throw DimensionError("narrow: dim out of range");
    if (start + len > s[dim]) throw DimensionError("narrow: slice exceeds extent");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < dim; ++i) outer *= s[i];
    for (std::size_t i = dim + 1; i < s.size(); ++i) inner *= s[i];
    Shape out_shape = s;
    out_shape[dim] = len;
    std::vector<T> out(outer * len * inner);
    const T* src = a.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * len * inner, src + (o * s[dim] + start) * inner, len * inner * sizeof(T));
    auto an = a.node();
    const std::size_t ext = s[dim];
    return make_op<T>(std::move(out_shape), std::move(out), {a},
                      [an, outer, inner, len, start, ext](detail::Node<T>& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t ou = 0; ou < outer; ++ou) {
                              const T* g = o.grad.data() + ou * len * inner;
                              T* dst = an->grad.data() + (ou * ext + start) * inner;
                              accum_range(dst, g, len * inner);
                          }
                      });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& a, std::vector<std::int64_t> idx, Shape out_shape) {
    if (idx.size() != shape_numel(out_shape)) throw DimensionError("gather: index count does not match output shape");
    std::vector<T> out(idx.size());
    const auto& av = a.data();
    const auto n = static_cast<std::int64_t>(av.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::int64_t j = idx[i];
        if (j >= n) throw DimensionError("gather: index out of range");
        out[i] = j < 0 ? T(0) : av[static_cast<std::size_t>(j)];
    }
    auto an = a.node();
    auto idx_shared = std::make_shared<std::vector<std::int64_t>>(std::move(idx));
    return make_op<T>(std::move(out_shape), std::move(out), {a}, [an, idx_shared](detail::Node<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const auto& ix = *idx_shared;
        for (std::size_t i = 0; i < ix.size(); ++i)
            if (ix[i] >= 0) an->grad[static_cast<std::size_t>(ix[i])] += o.grad[i];
    });
}

template <typename T>
Tensor<T> add_bias_rows(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.rank() < 1 || bias.rank() != 1) throw DimensionError("add_bias_rows: expects x [rows,d], bias [d]");
    const std::size_t d = bias.dim(0);
    if (x.size() % d != 0 || x.shape().back() != d) throw DimensionError("add_bias_rows: trailing extent mismatch");
    const std::size_t rows = x.size() / d;
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.data()[r * d + j] + bias.data()[j];
    auto xn = x.node();
    auto bn = bias.node();
    return make_op<T>(x.shape(), std::move(out), {x, bias}, [xn, bn, rows, d](detail::Node<T>& o) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            accum(xn->grad, o.grad.data(), o.grad.size());
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) bn->grad[j] += o.grad[r * d + j];
        }
    });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = 0;
    for (T v : a.data()) s += v;
    auto an = a.node();
    return make_op<T>({1}, {s}, {a}, [an](detail::Node<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T g = o.grad[0];
        for (auto& v : an->grad) v += g;
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    if (a.size() == 0) throw DimensionError("mean_all: empty tensor");
    T s = 0;
    for (T v : a.data()) s += v;
    const T inv = T(1) / static_cast<T>(a.size());
    auto an = a.node();
    return make_op<T>({1}, {s * inv}, {a}, [an, inv](detail::Node<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T g = o.grad[0] * inv;
        for (auto& v : an->grad) v += g;
    });
}

// ------------------------------------------------------------- linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul: expects rank-2 operands");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw DimensionError("matmul: inner extents differ");
    std::vector<T> out(m * n);
    kernels::gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::Node<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            kernels::gemm_a_bt(o.grad.data(), bn->data.data(), an->grad.data(), m, n, k, true);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            kernels::gemm_at_b(an->data.data(), o.grad.data(), bn->grad.data(), k, m, n, true);
        }
    });
}

template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b, T alpha) {
    if (a.rank() != 3 || b.rank() != 3) throw DimensionError("batched_matmul: expects rank-3 operands");
    const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2);
    if (b.dim(0) != g) throw DimensionError("batched_matmul: group counts differ");
    const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
    const std::size_t bk = trans_b ? b.dim(2) : b.dim(1);
    if (bk != k) throw DimensionError("batched_matmul: inner extents differ");
    std::vector<T> out(g * m * n);
    const bool par_groups = m * n * k < 16 * 1024 && max_threads() > 1 && g > 1;
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (par_groups)
    for (std::ptrdiff_t gi = 0; gi < static_cast<std::ptrdiff_t>(g); ++gi) {
        const T* ap = a.data().data() + gi * m * k;
        const T* bp = b.data().data() + gi * k * n;
        T* cp = out.data() + gi * m * n;
        if (trans_b)
            kernels::gemm_a_bt(ap, bp, cp, m, k, n, false);
        else
            kernels::gemm(ap, bp, cp, m, k, n, false);
    }
    if (alpha != T(1))
        for (auto& v : out) v *= alpha;
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>({g, m, n}, std::move(out), {a, b}, [an, bn, g, m, k, n, trans_b, alpha](detail::Node<T>& o) {
        std::vector<T> go;
        const T* gptr = o.grad.data();
        if (alpha != T(1)) {
            go.resize(o.grad.size());
            for (std::size_t i = 0; i < go.size(); ++i) go[i] = o.grad[i] * alpha;
            gptr = go.data();
        }
        for (std::size_t gi = 0; gi < g; ++gi) {
            const T* dC = gptr + gi * m * n;
            const T* A = an->data.data() + gi * m * k;
            const T* B = bn->data.data() + gi * k * n;
            if (an->requires_grad) {
                an->ensure_grad();
                T* dA = an->grad.data() + gi * m * k;
                if (trans_b)
                    kernels::gemm(dC, B, dA, m, n, k, true);  // dA = dC * B   (B is [n,k])
                else
                    kernels::gemm_a_bt(dC, B, dA, m, n, k, true);  // dA = dC * B^T
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                T* dB = bn->grad.data() + gi * k * n;
                if (trans_b)
                    kernels::gemm_at_b(dC, A, dB, n, m, k, true);  // dB[n,k] = dC^T * A
                else
                    kernels::gemm_at_b(A, dC, dB, k, m, n, true);  // dB[k,n] = A^T * dC
            }
        }
    });
}

// ------------------------------------------------- normalization / attention

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    if (x.rank() < 1 || x.shape().back() < 1) throw DimensionError("softmax_lastdim: empty last dim");
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.size() / d;
    std::vector<T> out(x.size());
    const T* xv = x.data().data();
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (rows > 64 && max_threads() > 1)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
        const T* in = xv + r * d;
        T* o = out.data() + r * d;
        T mx = in[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        T denom = 0;
        for (std::size_t j = 0; j < d; ++j) {
            o[j] = std::exp(in[j] - mx);
            denom += o[j];
        }
        const T inv = T(1) / denom;
        for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
    }
    auto xn = x.node();
    auto saved = std::make_shared<std::vector<T>>(out);
    return make_op<T>(x.shape(), std::move(out), {x}, [xn, saved, rows, d](detail::Node<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const auto& y = *saved;
        for (std::size_t r = 0; r < rows; ++r) {
            const T* yr = y.data() + r * d;
            const T* gr = o.grad.data() + r * d;
            T dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
            T* dst = xn->grad.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += yr[j] * (gr[j] - dot);
        }
    });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const std::size_t d = x.shape().back();
    if (gamma.size() != d || beta.size() != d) throw DimensionError("layer_norm: gamma/beta extent mismatch");
    const std::size_t rows = x.size() / d;
    std::vector<T> out(x.size());
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    const T* xv = x.data().data();
    const T* gv = gamma.data().data();
    const T* bv = beta.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv + r * d;
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const T c = in[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        T* xh = xhat->data() + r * d;
        T* o = out.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (in[j] - mean) * is;
            o[j] = xh[j] * gv[j] + bv[j];
        }
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return make_op<T>(x.shape(), std::move(out), {x, gamma, beta},
                      [xn, gn, bn, xhat, inv_std, rows, d](detail::Node<T>& o) {
                          if (gn->requires_grad) gn->ensure_grad();
                          if (bn->requires_grad) bn->ensure_grad();
                          if (xn->requires_grad) xn->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) {
                              const T* gr = o.grad.data() + r * d;
                              const T* xh = xhat->data() + r * d;
                              if (gn->requires_grad || bn->requires_grad) {
                                  for (std::size_t j = 0; j < d; ++j) {
                                      if (gn->requires_grad) gn->grad[j] += gr[j] * xh[j];
                                      if (bn->requires_grad) bn->grad[j] += gr[j];
                                  }
                              }
                              if (xn->requires_grad) {
                                  // dx = is * (dyg - mean(dyg) - xhat * mean(dyg*xhat))
                                  T m1 = 0, m2 = 0;
                                  for (std::size_t j = 0; j < d; ++j) {
                                      const T dyg = gr[j] * gn->data[j];
                                      m1 += dyg;
                                      m2 += dyg * xh[j];
                                  }
                                  m1 /= static_cast<T>(d);
                                  m2 /= static_cast<T>(d);
                                  T* dst = xn->grad.data() + r * d;
                                  const T is = (*inv_std)[r];
                                  for (std::size_t j = 0; j < d; ++j) {
                                      const T dyg = gr[j] * gn->data[j];
                                      dst[j] += is * (dyg - m1 - xh[j] * m2);
                                  }
                              }
                          }
                      });
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, bool training, bool update_running, T momentum, T eps) {
    if (x.rank() != 4) throw DimensionError("batch_norm2d: expects [N,C,H,W]");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.size() != c || beta.size() != c || running_mean.size() != c || running_var.size() != c)
        throw DimensionError("batch_norm2d: per-channel parameter extent mismatch");
    const std::size_t hw = h * w, chw = c * hw;
    const std::size_t count = n * hw;
    std::vector<T> mean(c), var(c);
    if (training) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            T s = 0;
            for (std::size_t ni = 0; ni < n; ++ni) {
                const T* p = x.data().data() + ni * chw + ci * hw;
                for (std::size_t i = 0; i < hw; ++i) s += p[i];
            }
            mean[ci] = s / static_cast<T>(count);
            T v = 0;
            for (std::size_t ni = 0; ni < n; ++ni) {
                const T* p = x.data().data() + ni * chw + ci * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const T d0 = p[i] - mean[ci];
                    v += d0 * d0;
                }
            }
            var[ci] = v / static_cast<T>(count);
        }
        if (update_running) {
            auto& rm = running_mean.data();
            auto& rv = running_var.data();
            for (std::size_t ci = 0; ci < c; ++ci) {
                rm[ci] = momentum * rm[ci] + (T(1) - momentum) * mean[ci];
                rv[ci] = momentum * rv[ci] + (T(1) - momentum) * var[ci];
            }
        }
    } else {
        mean = running_mean.data();
        var = running_var.data();
    }
    std::vector<T> inv_std(c);
    for (std::size_t ci = 0; ci < c; ++ci) inv_std[ci] = T(1) / std::sqrt(var[ci] + eps);

    std::vector<T> out(x.size());
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    for (std::size_t ni = 0; ni < n; ++ni) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            const T* p = x.data().data() + ni * chw + ci * hw;
            T* xh = xhat->data() + ni * chw + ci * hw;
            T* o = out.data() + ni * chw + ci * hw;
            const T mu = mean[ci], is = inv_std[ci], g = gamma.data()[ci], b = beta.data()[ci];
            for (std::size_t i = 0; i < hw; ++i) {
                xh[i] = (p[i] - mu) * is;
                o[i] = xh[i] * g + b;
            }
        }
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto is_shared = std::make_shared<std::vector<T>>(std::move(inv_std));
    return make_op<T>(x.shape(), std::move(out), {x, gamma, beta},
                      [xn, gn, bn, xhat, is_shared, n, c, hw, chw, count, training](detail::Node<T>& o) {
                          if (gn->requires_grad) gn->ensure_grad();
                          if (bn->requires_grad) bn->ensure_grad();
                          if (xn->requires_grad) xn->ensure_grad();
                          for (std::size_t ci = 0; ci < c; ++ci) {
                              T dg = 0, db = 0;
                              for (std::size_t ni = 0; ni < n; ++ni) {
                                  const T* gr = o.grad.data() + ni * chw + ci * hw;
                                  const T* xh = xhat->data() + ni * chw + ci * hw;
                                  for (std::size_t i = 0; i < hw; ++i) {
                                      dg += gr[i] * xh[i];
                                      db += gr[i];
                                  }
                              }
                              if (gn->requires_grad) gn->grad[ci] += dg;
                              if (bn->requires_grad) bn->grad[ci] += db;
                              if (xn->requires_grad) {
                                  const T g = gn->data[ci], is = (*is_shared)[ci];
                                  if (training) {
                                      const T m_db = db / static_cast<T>(count);
                                      const T m_dg = dg / static_cast<T>(count);
                                      for (std::size_t ni = 0; ni < n; ++ni) {
                                          const T* gr = o.grad.data() + ni * chw + ci * hw;
                                          const T* xh = xhat->data() + ni * chw + ci * hw;
                                          T* dst = xn->grad.data() + ni * chw + ci * hw;
                                          for (std::size_t i = 0; i < hw; ++i)
                                              dst[i] += g * is * (gr[i] - m_db - xh[i] * m_dg);
                                      }
                                  } else {
                                      for (std::size_t ni = 0; ni < n; ++ni) {
                                          const T* gr = o.grad.data() + ni * chw + ci * hw;
                                          T* dst = xn->grad.data() + ni * chw + ci * hw;
                                          for (std::size_t i = 0; i < hw; ++i) dst[i] += g * is * gr[i];
                                      }
                                  }
                              }
                          }
                      });
}

template <typename T>
Tensor<T> add_head_bias(const Tensor<T>& scores, const Tensor<T>& bias, std::size_t groups, std::size_t heads) {
    if (bias.rank() != 3) throw DimensionError("add_head_bias: bias expects [heads,T,T]");
    const std::size_t tt = bias.dim(1) * bias.dim(2);
    if (bias.dim(0) != heads || scores.size() != groups * heads * tt)
        throw DimensionError("add_head_bias: extent mismatch");
    std::vector<T> out(scores.size());
    for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t hh = 0; hh < heads; ++hh) {
            const T* s = scores.data().data() + (g * heads + hh) * tt;
            const T* b = bias.data().data() + hh * tt;
            T* o = out.data() + (g * heads + hh) * tt;
            for (std::size_t i = 0; i < tt; ++i) o[i] = s[i] + b[i];
        }
    auto sn = scores.node();
    auto bn = bias.node();
    return make_op<T>(scores.shape(), std::move(out), {scores, bias}, [sn, bn, groups, heads, tt](detail::Node<T>& o) {
        if (sn->requires_grad) {
            sn->ensure_grad();
            accum(sn->grad, o.grad.data(), o.grad.size());
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t g = 0; g < groups; ++g)
                for (std::size_t hh = 0; hh < heads; ++hh) {
                    const T* gr = o.grad.data() + (g * heads + hh) * tt;
                    T* dst = bn->grad.data() + hh * tt;
                    for (std::size_t i = 0; i < tt; ++i) dst[i] += gr[i];
                }
        }
    });
}

template <typename T>
Tensor<T> add_window_mask(const Tensor<T>& scores, const std::vector<T>& mask, std::size_t batch, std::size_t nwin,
                          std::size_t heads, std::size_t tokens) {
    const std::size_t tt = tokens * tokens;
    if (mask.size() != nwin * tt || scores.size() != batch * nwin * heads * tt)
        throw DimensionError("add_window_mask: extent mismatch");
    std::vector<T> out(scores.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t w = 0; w < nwin; ++w)
            for (std::size_t hh = 0; hh < heads; ++hh) {
                const std::size_t off = ((b * nwin + w) * heads + hh) * tt;
                const T* m = mask.data() + w * tt;
                for (std::size_t i = 0; i < tt; ++i) out[off + i] = scores.data()[off + i] + m[i];
            }
    auto sn = scores.node();
    return make_op<T>(scores.shape(), std::move(out), {scores}, [sn](detail::Node<T>& o) {
        if (!sn->requires_grad) return;
        sn->ensure_grad();
        accum(sn->grad, o.grad.data(), o.grad.size());
    });
}

// --------------------------------------------------- convolution / resampling

namespace {

template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
    // cols: [c*kh*kw, ho*wo]
    const std::size_t p = ho * wo;
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
                T* row = cols + ((ci * kh + i) * kw + j) * p;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(pad);
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(row + oy * wo, row + (oy + 1) * wo, T(0));
                        continue;
                    }
                    const T* src = x + ci * h * w + static_cast<std::size_t>(sy) * w;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(pad);
                        row[oy * wo + ox] =
                            (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[static_cast<std::size_t>(sx)];
                    }
                }
            }
}

template <typename T>
void col2im_accum(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                  std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* dx) {
    const std::size_t p = ho * wo;
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
                const T* row = cols + ((ci * kh + i) * kw + j) * p;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(pad);
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    T* dst = dx + ci * h * w + static_cast<std::size_t>(sy) * w;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(pad);
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                        dst[static_cast<std::size_t>(sx)] += row[oy * wo + ox];
                    }
                }
            }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride, std::size_t pad) {
    if (x.rank() != 4 || w.rank() != 4) throw DimensionError("conv2d: expects x [N,C,H,W], w [O,C,kh,kw]");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const std::size_t o = w.dim(0), kc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (kc != c) throw DimensionError("conv2d: channel counts differ");
    if (stride == 0) throw DimensionError("conv2d: stride must be positive");
    const std::ptrdiff_t ho_s = (static_cast<std::ptrdiff_t>(h) + 2 * static_cast<std::ptrdiff_t>(pad) -
                                 static_cast<std::ptrdiff_t>(kh)) / static_cast<std::ptrdiff_t>(stride) + 1;
    const std::ptrdiff_t wo_s = (static_cast<std::ptrdiff_t>(ww) + 2 * static_cast<std::ptrdiff_t>(pad) -
                                 static_cast<std::ptrdiff_t>(kw)) / static_cast<std::ptrdiff_t>(stride) + 1;
    if (ho_s <= 0 || wo_s <= 0 || h + 2 * pad < kh || ww + 2 * pad < kw)
        throw DimensionError("conv2d: kernel does not fit padded input");
    const std::size_t ho = static_cast<std::size_t>(ho_s), wo = static_cast<std::size_t>(wo_s);
    const std::size_t k = c * kh * kw, p = ho * wo;
    const bool has_bias = bias.defined();
    if (has_bias && bias.size() != o) throw DimensionError("conv2d: bias extent mismatch");

    auto cols = std::make_shared<std::vector<T>>(n * k * p);
    std::vector<T> out(n * o * p);
    for (std::size_t ni = 0; ni < n; ++ni) {
        T* col_n = cols->data() + ni * k * p;
        im2col(x.data().data() + ni * c * h * ww, c, h, ww, kh, kw, stride, pad, ho, wo, col_n);
        T* out_n = out.data() + ni * o * p;
        kernels::gemm(w.data().data(), col_n, out_n, o, k, p, false);
        if (has_bias)
            for (std::size_t oi = 0; oi < o; ++oi) {
                const T b = bias.data()[oi];
                T* row = out_n + oi * p;
                for (std::size_t i = 0; i < p; ++i) row[i] += b;
            }
    }
    auto xn = x.node();
    auto wn = w.node();
    auto bn = has_bias ? bias.node() : nullptr;
    std::vector<Tensor<T>> parents = {x, w};
    if (has_bias) parents.push_back(bias);
    return make_op<T>({n, o, ho, wo}, std::move(out), parents,
                      [xn, wn, bn, cols, n, c, h, ww, o, kh, kw, stride, pad, ho, wo, k, p](detail::Node<T>& og) {
                          if (wn->requires_grad) wn->ensure_grad();
                          if (xn->requires_grad) xn->ensure_grad();
                          if (bn && bn->requires_grad) bn->ensure_grad();
                          std::vector<T> dcols(xn->requires_grad ? k * p : 0);
                          for (std::size_t ni = 0; ni < n; ++ni) {
                              const T* dout_n = og.grad.data() + ni * o * p;
                              const T* col_n = cols->data() + ni * k * p;
                              if (wn->requires_grad)
                                  kernels::gemm_a_bt(dout_n, col_n, wn->grad.data(), o, p, k, true);
                              if (bn && bn->requires_grad)
                                  for (std::size_t oi = 0; oi < o; ++oi) {
                                      T s = 0;
                                      const T* row = dout_n + oi * p;
                                      for (std::size_t i = 0; i < p; ++i) s += row[i];
                                      bn->grad[oi] += s;
                                  }
                              if (xn->requires_grad) {
                                  kernels::gemm_at_b(wn->data.data(), dout_n, dcols.data(), k, o, p, false);
                                  col2im_accum(dcols.data(), c, h, ww, kh, kw, stride, pad, ho, wo,
                                               xn->grad.data() + ni * c * h * ww);
                              }
                          }
                      });
}

template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
    if (x.rank() != 4) throw DimensionError("upsample_bilinear2x: expects [N,C,H,W]");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t h2 = 2 * h, w2 = 2 * w;
    // Half-pixel centers: src = (dst + 0.5)/2 - 0.5, clamped.
    std::vector<std::size_t> i0(h2), i1(h2), j0(w2), j1(w2);
    std::vector<T> wi(h2), wj(w2);  // weight of the upper (i1/j1) sample
    auto plan = [](std::size_t len, std::vector<std::size_t>& a0, std::vector<std::size_t>& a1, std::vector<T>& wt,
                   std::size_t src_len) {
        for (std::size_t d0 = 0; d0 < len; ++d0) {
            const double s = (static_cast<double>(d0) + 0.5) / 2.0 - 0.5;
            const double f = std::floor(s);
            double t = s - f;
            std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(f);
            std::ptrdiff_t hi = lo + 1;
            if (lo < 0) { lo = 0; hi = 0; t = 0; }
            if (hi >= static_cast<std::ptrdiff_t>(src_len)) { hi = static_cast<std::ptrdiff_t>(src_len) - 1; lo = hi; t = 0; }
            a0[d0] = static_cast<std::size_t>(lo);
            a1[d0] = static_cast<std::size_t>(hi);
            wt[d0] = static_cast<T>(t);
        }
    };
    plan(h2, i0, i1, wi, h);
    plan(w2, j0, j1, wj, w);
    std::vector<T> out(n * c * h2 * w2);
    const std::size_t planes = n * c;
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (planes > 1 && max_threads() > 1)
    for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(planes); ++pi) {
        const T* src = x.data().data() + pi * h * w;
        T* dst = out.data() + pi * h2 * w2;
        for (std::size_t y = 0; y < h2; ++y) {
            const T* r0 = src + i0[y] * w;
            const T* r1 = src + i1[y] * w;
            const T ty = wi[y];
            for (std::size_t xx = 0; xx < w2; ++xx) {
                const T tx = wj[xx];
                const T a = r0[j0[xx]] * (T(1) - tx) + r0[j1[xx]] * tx;
                const T b = r1[j0[xx]] * (T(1) - tx) + r1[j1[xx]] * tx;
                dst[y * w2 + xx] = a * (T(1) - ty) + b * ty;
            }
        }
    }
    auto xn = x.node();
    auto i0s = std::make_shared<std::vector<std::size_t>>(std::move(i0));
    auto i1s = std::make_shared<std::vector<std::size_t>>(std::move(i1));
    auto j0s = std::make_shared<std::vector<std::size_t>>(std::move(j0));
    auto j1s = std::make_shared<std::vector<std::size_t>>(std::move(j1));
    auto wis = std::make_shared<std::vector<T>>(std::move(wi));
    auto wjs = std::make_shared<std::vector<T>>(std::move(wj));
    return make_op<T>({n, c, h2, w2}, std::move(out), {x},
                      [xn, i0s, i1s, j0s, j1s, wis, wjs, planes, h, w, h2, w2](detail::Node<T>& o) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          for (std::size_t pi = 0; pi < planes; ++pi) {
                              const T* gr = o.grad.data() + pi * h2 * w2;
                              T* dst = xn->grad.data() + pi * h * w;
                              for (std::size_t y = 0; y < h2; ++y) {
                                  const T ty = (*wis)[y];
                                  for (std::size_t xx = 0; xx < w2; ++xx) {
                                      const T tx = (*wjs)[xx];
                                      const T g = gr[y * w2 + xx];
                                      dst[(*i0s)[y] * w + (*j0s)[xx]] += g * (T(1) - ty) * (T(1) - tx);
                                      dst[(*i0s)[y] * w + (*j1s)[xx]] += g * (T(1) - ty) * tx;
                                      dst[(*i1s)[y] * w + (*j0s)[xx]] += g * ty * (T(1) - tx);
                                      dst[(*i1s)[y] * w + (*j1s)[xx]] += g * ty * tx;
                                  }
                              }
                          }
                      });
}

template <typename T>
Tensor<T> pad2d_bottom_right(const Tensor<T>& x, std::size_t pad_h, std::size_t pad_w) {
    if (x.rank() != 4) throw DimensionError("pad2d_bottom_right: expects [N,C,H,W]");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t h2 = h + pad_h, w2 = w + pad_w;
    std::vector<T> out(n * c * h2 * w2, T(0));
    for (std::size_t pc = 0; pc < n * c; ++pc)
        for (std::size_t y = 0; y < h; ++y)
            std::memcpy(out.data() + (pc * h2 + y) * w2, x.data().data() + (pc * h + y) * w, w * sizeof(T));
    auto xn = x.node();
    return make_op<T>({n, c, h2, w2}, std::move(out), {x}, [xn, n, c, h, w, h2, w2](detail::Node<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t pc = 0; pc < n * c; ++pc)
            for (std::size_t y = 0; y < h; ++y) {
                const T* g = o.grad.data() + (pc * h2 + y) * w2;
                T* dst = xn->grad.data() + (pc * h + y) * w;
                for (std::size_t xx = 0; xx < w; ++xx) dst[xx] += g[xx];
            }
    });
}

template <typename T>
Tensor<T> crop2d_top_left(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 4) throw DimensionError("crop2d_top_left: expects [N,C,H,W]");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (out_h > h || out_w > w) throw DimensionError("crop2d_top_left: crop larger than input");
    std::vector<T> out(n * c * out_h * out_w);
    for (std::size_t pc = 0; pc < n * c; ++pc)
        for (std::size_t y = 0; y < out_h; ++y)
            std::memcpy(out.data() + (pc * out_h + y) * out_w, x.data().data() + (pc * h + y) * w,
                        out_w * sizeof(T));
    auto xn = x.node();
    return make_op<T>({n, c, out_h, out_w}, std::move(out), {x}, [xn, n, c, h, w, out_h, out_w](detail::Node<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t pc = 0; pc < n * c; ++pc)
            for (std::size_t y = 0; y < out_h; ++y) {
                const T* g = o.grad.data() + (pc * out_h + y) * out_w;
                T* dst = xn->grad.data() + (pc * h + y) * w;
                for (std::size_t xx = 0; xx < out_w; ++xx) dst[xx] += g[xx];
            }
    });
}

// ------------------------------------------------------------- instantiation

#define MOSF_INSTANTIATE_OPS(T)                                                                                       \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                                    \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                                    \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                                    \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                                                 \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                                     \
    template Tensor<T> gelu<T>(const Tensor<T>&);                                                                     \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                           \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                                         \
    template Tensor<T> narrow<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                            \
    template Tensor<T> gather<T>(const Tensor<T>&, std::vector<std::int64_t>, Shape);                                 \
    template Tensor<T> add_bias_rows<T>(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                                                                  \
    template Tensor<T> mean_all<T>(const Tensor<T>&);                                                                 \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                                 \
    template Tensor<T> batched_matmul<T>(const Tensor<T>&, const Tensor<T>&, bool, T);                                \
    template Tensor<T> softmax_lastdim<T>(const Tensor<T>&);                                                          \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                        \
    template Tensor<T> batch_norm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, \
                                       bool, bool, T, T);                                                             \
    template Tensor<T> add_head_bias<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);               \
    template Tensor<T> add_window_mask<T>(const Tensor<T>&, const std::vector<T>&, std::size_t, std::size_t,         \
                                          std::size_t, std::size_t);                                                  \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);    \
    template Tensor<T> upsample_bilinear2x<T>(const Tensor<T>&);                                                      \
    template Tensor<T> pad2d_bottom_right<T>(const Tensor<T>&, std::size_t, std::size_t);                             \
    template Tensor<T> crop2d_top_left<T>(const Tensor<T>&, std::size_t, std::size_t);

MOSF_INSTANTIATE_OPS(float)
MOSF_INSTANTIATE_OPS(double)

}  // namespace mosf
