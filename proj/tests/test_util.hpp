#pragma once

// Shared test helpers: random tensors and the independent oracles (direct
// quadruple-loop DFT, six-loop convolution, central finite differences).
// These stay independent of the implementation paths they check.

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "tafcal/autodiff.hpp"
#include "tafcal/optim.hpp"
#include "tafcal/rng.hpp"
#include "tafcal/spectral.hpp"
#include "tafcal/tensor.hpp"

namespace testutil {

template <typename T>
tafcal::Tensor4<T> random_tensor(tafcal::Shape4 s, tafcal::Rng& rng, double lo = -1.0,
                                 double hi = 1.0) {
  tafcal::Tensor4<T> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Direct evaluation of the defining double sum, one output bin at a time.
template <typename T>
tafcal::Spectrum<double> dft_oracle(const tafcal::Tensor4<T>& z) {
  const tafcal::Shape4 s = z.shape();
  tafcal::Spectrum<double> out{tafcal::Tensor4<double>(s), tafcal::Tensor4<double>(s)};
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int m = 0; m < s.h; ++m)
        for (int k = 0; k < s.w; ++k) {
          double re = 0.0, im = 0.0;
          for (int h = 0; h < s.h; ++h)
            for (int w = 0; w < s.w; ++w) {
              const double ang = -2.0 * M_PI * (static_cast<double>(m) * h / s.h +
                                                static_cast<double>(k) * w / s.w);
              const double v = static_cast<double>(z.at(n, c, h, w));
              re += v * std::cos(ang);
              im += v * std::sin(ang);
            }
          out.re.at(n, c, m, k) = re;
          out.im.at(n, c, m, k) = im;
        }
  return out;
}

// Direct inverse: (1/(HW)) sum a*exp(j p)*exp(+j 2pi ...), real part; also
// reports the largest imaginary magnitude.
template <typename T>
tafcal::Tensor4<double> idft_oracle(const tafcal::Tensor4<T>& amp,
                                    const tafcal::Tensor4<T>& phase, double* imag_max) {
  const tafcal::Shape4 s = phase.shape();
  tafcal::Tensor4<double> out(s);
  double worst = 0.0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          double re = 0.0, im = 0.0;
          for (int m = 0; m < s.h; ++m)
            for (int k = 0; k < s.w; ++k) {
              const int an = amp.n() == 1 ? 0 : n;
              const double a = static_cast<double>(amp.at(an, c, m, k));
              const double p = static_cast<double>(phase.at(n, c, m, k));
              const double ang = 2.0 * M_PI * (static_cast<double>(m) * h / s.h +
                                               static_cast<double>(k) * w / s.w);
              re += a * std::cos(p + ang);
              im += a * std::sin(p + ang);
            }
          const double scale = 1.0 / (static_cast<double>(s.h) * s.w);
          out.at(n, c, h, w) = re * scale;
          worst = std::max(worst, std::abs(im * scale));
        }
  if (imag_max) *imag_max = worst;
  return out;
}

// Six nested loops straight from the definition of a padded strided conv.
template <typename T>
tafcal::Tensor4<double> conv_oracle(const tafcal::Tensor4<T>& x, const tafcal::Tensor4<T>& w,
                                    const tafcal::Tensor4<T>& b, int stride, int pad) {
  const tafcal::Shape4 xs = x.shape(), ws = w.shape();
  const int ho = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int wo = (xs.w + 2 * pad - ws.w) / stride + 1;
  tafcal::Tensor4<double> out(xs.n, ws.n, ho, wo);
  for (int n = 0; n < xs.n; ++n)
    for (int co = 0; co < ws.n; ++co)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          double acc = static_cast<double>(b[static_cast<std::size_t>(co)]);
          for (int ci = 0; ci < xs.c; ++ci)
            for (int kh = 0; kh < ws.h; ++kh)
              for (int kw = 0; kw < ws.w; ++kw) {
                const int hi = oh * stride - pad + kh;
                const int wi = ow * stride - pad + kw;
                if (hi < 0 || hi >= xs.h || wi < 0 || wi >= xs.w) continue;
                acc += static_cast<double>(w.at(co, ci, kh, kw)) *
                       static_cast<double>(x.at(n, ci, hi, wi));
              }
          out.at(n, co, oh, ow) = acc;
        }
  return out;
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;
};

// Central finite differences with step h against the recorded adjoints.
// loss_fn must rebuild the graph from the current parameter values.
template <typename LossFn>
GradCheckReport finite_difference_check(std::vector<tafcal::ParamRef<double>>& params,
                                        LossFn&& loss_fn, double h = 1e-5,
                                        double floor_abs = 1e-8) {
  for (auto& p : params) p.var.zero_grad();
  tafcal::Var<double> loss = loss_fn();
  tafcal::backward(loss);

  GradCheckReport report;
  for (auto& p : params) {
    tafcal::Tensor4<double>& v = p.var.mutable_value();
    const tafcal::Tensor4<double>& g = p.var.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = loss_fn().value()[0];
      v[i] = keep - h;
      const double down = loss_fn().value()[0];
      v[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = g[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), floor_abs});
      const double rel = std::abs(numeric - analytic) / denom;
      if (std::abs(numeric - analytic) <= floor_abs) continue;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = p.name + "[" + std::to_string(i) + "] analytic=" +
                       std::to_string(analytic) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  return report;
}

}  // namespace testutil
