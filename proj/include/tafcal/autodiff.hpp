#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tafcal/errors.hpp"
#include "tafcal/tensor.hpp"

// Tape-based reverse-mode differentiation over rank-4 tensors, plus the
// layer set the classifier is built from. Nodes are created strictly after
// their parents, so any DFS post-order from the loss is a valid traversal
// order for the adjoint sweep.

namespace tafcal {

template <typename T>
struct Node {
  Tensor4<T> value;
  Tensor4<T> grad;  // allocated only when requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;  // scatters this->grad into parents

  void accumulate(const Tensor4<T>& g) {
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  }
};

template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor4<T> v) {
    Var out;
    out.n_ = std::make_shared<Node<T>>();
    out.n_->value = std::move(v);
    return out;
  }

  static Var parameter(Tensor4<T> v) {
    Var out;
    out.n_ = std::make_shared<Node<T>>();
    out.n_->grad = Tensor4<T>(v.shape());
    out.n_->value = std::move(v);
    out.n_->requires_grad = true;
    return out;
  }

  bool valid() const { return n_ != nullptr; }
  const Tensor4<T>& value() const { return n_->value; }
  const Tensor4<T>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  Tensor4<T>& mutable_value() { return n_->value; }
  Tensor4<T>& mutable_grad() { return n_->grad; }

  void zero_grad() {
    if (n_ && n_->requires_grad) n_->grad.fill(T(0));
  }

  std::shared_ptr<Node<T>> node() const { return n_; }

  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var out;
    out.n_ = std::move(n);
    return out;
  }

 private:
  std::shared_ptr<Node<T>> n_;
};

template <typename T>
Var<T> make_op(Tensor4<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->grad = Tensor4<T>(n->value.shape());
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Var<T>::from_node(std::move(n));
}

// Runs the adjoint sweep from a scalar loss. Gradients accumulate into every
// reachable node that requires them; parameters keep accumulating across
// calls until zero_grad.
template <typename T>
void backward(const Var<T>& loss) {
  const Shape4 s = loss.value().shape();
  if (s.numel() != 1)
    fail(ErrorCategory::invalid_argument,
         "backward: loss must be scalar-shaped, got " + s.str());
  if (!loss.requires_grad()) return;  // nothing reachable needs gradients

  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  struct Frame {
    Node<T>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<T>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->grad[0] += T(1);  // seed: d loss / d loss = 1
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor4<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T k) {
  Tensor4<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= k;
  return make_op<T>(std::move(out), {a}, [k](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += k * self.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor4<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * pb->value[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb->grad[i] += self.grad[i] * pa->value[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) acc += static_cast<double>(a.value()[i]);
  Tensor4<T> out(1, 1, 1, 1);
  out[0] = static_cast<T>(acc);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    const T g = self.grad[0];
    for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor4<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > T(0) ? out[i] : T(0);
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p->value[i] > T(0)) p->grad[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace conv_detail {

// Output index range [lo, hi) such that o*stride - pad + k lands inside [0, extent).
inline std::pair<int, int> valid_out_range(int out_extent, int in_extent, int stride, int pad,
                                           int k) {
  int lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  int hi = (in_extent - 1 + pad - k) / stride + 1;
  hi = std::min(hi, out_extent);
  return {lo, std::max(hi, lo)};
}

}  // namespace conv_detail

// x: (N, Ci, H, W); weight: (Co, Ci, Kh, Kw); bias: (Co, 1, 1, 1);
// zero padding `pad`, stride `stride`.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride = 1,
              int pad = 0) {
  const Shape4 xs = x.value().shape();
  const Shape4 ws = weight.value().shape();
  const Shape4 bs = bias.value().shape();
  if (stride < 1 || pad < 0)
    fail(ErrorCategory::invalid_argument, "conv2d: stride must be >= 1 and pad >= 0");
  if (xs.c != ws.c)
    fail(ErrorCategory::invalid_argument,
         "conv2d: input channels do not match kernel (input " + xs.str() + ", kernel " +
             ws.str() + ")");
  if (bs.n != ws.n || bs.c != 1 || bs.h != 1 || bs.w != 1)
    fail(ErrorCategory::invalid_argument,
         "conv2d: bias must be " + std::to_string(ws.n) + "x1x1x1, got " + bs.str());
  if (xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w)
    fail(ErrorCategory::invalid_argument,
         "conv2d: kernel larger than padded input (input " + xs.str() + ", kernel " + ws.str() +
             ")");

  const int ho = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int wo = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor4<T> out(xs.n, ws.n, ho, wo);

  const Tensor4<T>& xv = x.value();
  const Tensor4<T>& wv = weight.value();
  const Tensor4<T>& bv = bias.value();
  for (int n = 0; n < xs.n; ++n) {
    for (int co = 0; co < ws.n; ++co) {
      T* out_pl = out.plane(n, co);
      const T b = bv[static_cast<std::size_t>(co)];
      std::fill(out_pl, out_pl + out.plane_size(), b);
      for (int ci = 0; ci < xs.c; ++ci) {
        const T* x_pl = xv.plane(n, ci);
        const T* w_pl = wv.plane(co, ci);
        for (int kh = 0; kh < ws.h; ++kh) {
          const auto [h_lo, h_hi] = conv_detail::valid_out_range(ho, xs.h, stride, pad, kh);
          for (int kw = 0; kw < ws.w; ++kw) {
            const T wk = w_pl[kh * ws.w + kw];
            if (wk == T(0)) continue;
            const auto [w_lo, w_hi] = conv_detail::valid_out_range(wo, xs.w, stride, pad, kw);
            for (int oh = h_lo; oh < h_hi; ++oh) {
              const T* xrow = x_pl + static_cast<std::size_t>(oh * stride - pad + kh) * xs.w;
              T* orow = out_pl + static_cast<std::size_t>(oh) * wo;
              for (int ow = w_lo; ow < w_hi; ++ow)
                orow[ow] += wk * xrow[ow * stride - pad + kw];
            }
          }
        }
      }
    }
  }

  auto backprop = [stride, pad](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    const Shape4 xs2 = px->value.shape();
    const Shape4 ws2 = pw->value.shape();
    const Shape4 os = self.value.shape();

    if (pb->requires_grad) {
      for (int n = 0; n < os.n; ++n)
        for (int co = 0; co < os.c; ++co) {
          const T* g_pl = self.grad.plane(n, co);
          double acc = 0.0;
          for (std::size_t i = 0; i < self.grad.plane_size(); ++i)
            acc += static_cast<double>(g_pl[i]);
          pb->grad[static_cast<std::size_t>(co)] += static_cast<T>(acc);
        }
    }
    for (int n = 0; n < os.n; ++n) {
      for (int co = 0; co < os.c; ++co) {
        const T* g_pl = self.grad.plane(n, co);
        for (int ci = 0; ci < xs2.c; ++ci) {
          const T* x_pl = px->value.plane(n, ci);
          const T* w_pl = pw->value.plane(co, ci);
          T* dx_pl = px->requires_grad ? px->grad.plane(n, ci) : nullptr;
          T* dw_pl = pw->requires_grad ? pw->grad.plane(co, ci) : nullptr;
          for (int kh = 0; kh < ws2.h; ++kh) {
            const auto [h_lo, h_hi] = conv_detail::valid_out_range(os.h, xs2.h, stride, pad, kh);
            for (int kw = 0; kw < ws2.w; ++kw) {
              const auto [w_lo, w_hi] =
                  conv_detail::valid_out_range(os.w, xs2.w, stride, pad, kw);
              const T wk = w_pl[kh * ws2.w + kw];
              double dw_acc = 0.0;
              for (int oh = h_lo; oh < h_hi; ++oh) {
                const std::size_t xoff = static_cast<std::size_t>(oh * stride - pad + kh) * xs2.w;
                const T* grow = g_pl + static_cast<std::size_t>(oh) * os.w;
                if (dw_pl) {
                  const T* xrow = x_pl + xoff;
                  for (int ow = w_lo; ow < w_hi; ++ow)
                    dw_acc += static_cast<double>(grow[ow]) *
                              static_cast<double>(xrow[ow * stride - pad + kw]);
                }
                if (dx_pl) {
                  T* dxrow = dx_pl + xoff;
                  for (int ow = w_lo; ow < w_hi; ++ow)
                    dxrow[ow * stride - pad + kw] += wk * grow[ow];
                }
              }
              if (dw_pl) dw_pl[kh * ws2.w + kw] += static_cast<T>(dw_acc);
            }
          }
        }
      }
    }
  };
  return make_op<T>(std::move(out), {x, weight, bias}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// average pool 2x2 (stride 2)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> avgpool2(const Var<T>& x) {
  const Shape4 xs = x.value().shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0)
    fail(ErrorCategory::invalid_argument,
         "avgpool2: spatial dims must be even, got input " + xs.str());
  Tensor4<T> out(xs.n, xs.c, xs.h / 2, xs.w / 2);
  const Tensor4<T>& xv = x.value();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* in_pl = xv.plane(n, c);
      T* out_pl = out.plane(n, c);
      for (int oh = 0; oh < xs.h / 2; ++oh)
        for (int ow = 0; ow < xs.w / 2; ++ow) {
          const T* r0 = in_pl + static_cast<std::size_t>(2 * oh) * xs.w + 2 * ow;
          const T* r1 = r0 + xs.w;
          out_pl[static_cast<std::size_t>(oh) * (xs.w / 2) + ow] =
              (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
        }
    }
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    const Shape4 xs2 = p->value.shape();
    for (int n = 0; n < xs2.n; ++n)
      for (int c = 0; c < xs2.c; ++c) {
        const T* g_pl = self.grad.plane(n, c);
        T* dx_pl = p->grad.plane(n, c);
        for (int oh = 0; oh < xs2.h / 2; ++oh)
          for (int ow = 0; ow < xs2.w / 2; ++ow) {
            const T g = g_pl[static_cast<std::size_t>(oh) * (xs2.w / 2) + ow] * T(0.25);
            T* r0 = dx_pl + static_cast<std::size_t>(2 * oh) * xs2.w + 2 * ow;
            T* r1 = r0 + xs2.w;
            r0[0] += g;
            r0[1] += g;
            r1[0] += g;
            r1[1] += g;
          }
      }
  });
}

// ---------------------------------------------------------------------------
// flatten / dense
// ---------------------------------------------------------------------------

template <typename T>
Var<T> flatten(const Var<T>& x) {
  const Shape4 xs = x.value().shape();
  Tensor4<T> out(xs.n, xs.c * xs.h * xs.w, 1, 1);
  std::copy(x.value().data(), x.value().data() + x.value().size(), out.data());
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

// x: (N, F, 1, 1); weight: (K, F, 1, 1); bias: (K, 1, 1, 1) -> (N, K, 1, 1)
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape4 xs = x.value().shape();
  const Shape4 ws = weight.value().shape();
  if (xs.h != 1 || xs.w != 1)
    fail(ErrorCategory::invalid_argument, "dense: input must be flattened, got " + xs.str());
  if (xs.c != ws.c)
    fail(ErrorCategory::invalid_argument, "dense: feature count mismatch (input " + xs.str() +
                                              ", weight " + ws.str() + ")");
  if (bias.value().shape().numel() != static_cast<std::size_t>(ws.n))
    fail(ErrorCategory::invalid_argument,
         "dense: bias must have one value per output, got " + bias.value().shape().str());

  const int k = ws.n, f = ws.c;
  Tensor4<T> out(xs.n, k, 1, 1);
  for (int n = 0; n < xs.n; ++n) {
    const T* xr = x.value().data() + static_cast<std::size_t>(n) * f;
    for (int j = 0; j < k; ++j) {
      const T* wr = weight.value().data() + static_cast<std::size_t>(j) * f;
      double acc = static_cast<double>(bias.value()[static_cast<std::size_t>(j)]);
      for (int i = 0; i < f; ++i) acc += static_cast<double>(wr[i]) * static_cast<double>(xr[i]);
      out[static_cast<std::size_t>(n) * k + j] = static_cast<T>(acc);
    }
  }
  return make_op<T>(std::move(out), {x, weight, bias}, [k, f](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    const int n_rows = self.value.shape().n;
    for (int n = 0; n < n_rows; ++n) {
      const T* g = self.grad.data() + static_cast<std::size_t>(n) * k;
      const T* xr = px->value.data() + static_cast<std::size_t>(n) * f;
      T* dx = px->requires_grad ? px->grad.data() + static_cast<std::size_t>(n) * f : nullptr;
      for (int j = 0; j < k; ++j) {
        const T gj = g[j];
        const T* wr = pw->value.data() + static_cast<std::size_t>(j) * f;
        if (pb->requires_grad) pb->grad[static_cast<std::size_t>(j)] += gj;
        if (pw->requires_grad) {
          T* dw = pw->grad.data() + static_cast<std::size_t>(j) * f;
          for (int i = 0; i < f; ++i) dw[i] += gj * xr[i];
        }
        if (dx)
          for (int i = 0; i < f; ++i) dx[i] += gj * wr[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// cross entropy
// ---------------------------------------------------------------------------

// Mean over the batch of -log softmax(logits)[label], stabilized by
// max-subtraction. Logits are (N, K, 1, 1).
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  const Shape4 ls = logits.value().shape();
  if (ls.h != 1 || ls.w != 1)
    fail(ErrorCategory::invalid_argument, "cross_entropy: logits must be NxKx1x1, got " + ls.str());
  if (static_cast<int>(labels.size()) != ls.n)
    fail(ErrorCategory::invalid_argument,
         "cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
             std::to_string(ls.n));
  const int k = ls.c;
  for (const int y : labels)
    if (y < 0 || y >= k)
      fail(ErrorCategory::invalid_argument,
           "cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) +
               ")");

  // Softmax rows are kept for the backward rule.
  auto softmax = std::make_shared<std::vector<double>>(labels.size() * static_cast<std::size_t>(k));
  double loss_acc = 0.0;
  for (int n = 0; n < ls.n; ++n) {
    const T* row = logits.value().data() + static_cast<std::size_t>(n) * k;
    double mx = static_cast<double>(row[0]);
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(denom);
    loss_acc += lse - static_cast<double>(row[labels[static_cast<std::size_t>(n)]]);
    for (int j = 0; j < k; ++j)
      (*softmax)[static_cast<std::size_t>(n) * k + j] =
          std::exp(static_cast<double>(row[j]) - mx) / denom;
  }
  Tensor4<T> out(1, 1, 1, 1);
  out[0] = static_cast<T>(loss_acc / static_cast<double>(ls.n));

  return make_op<T>(std::move(out), {logits},
                    [softmax, labels, k](Node<T>& self) {
                      auto& p = self.parents[0];
                      if (!p->requires_grad) return;
                      const int n_rows = p->value.shape().n;
                      const T g = self.grad[0];
                      const T inv_n = T(1) / static_cast<T>(n_rows);
                      for (int n = 0; n < n_rows; ++n) {
                        T* dl = p->grad.data() + static_cast<std::size_t>(n) * k;
                        const double* sm = softmax->data() + static_cast<std::size_t>(n) * k;
                        for (int j = 0; j < k; ++j) {
                          const double onehot = (j == labels[static_cast<std::size_t>(n)]) ? 1.0 : 0.0;
                          dl[j] += g * inv_n * static_cast<T>(sm[j] - onehot);
                        }
                      }
                    });
}

// Argmax of each logits row; ties resolve to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor4<T>& logits) {
  const Shape4 s = logits.shape();
  std::vector<int> out(static_cast<std::size_t>(s.n));
  for (int n = 0; n < s.n; ++n) {
    const T* row = logits.data() + static_cast<std::size_t>(n) * s.c;
    int best = 0;
    for (int j = 1; j < s.c; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<std::size_t>(n)] = best;
  }
  return out;
}

}  // namespace tafcal
