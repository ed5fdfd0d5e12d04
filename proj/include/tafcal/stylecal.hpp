#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "tafcal/autodiff.hpp"
#include "tafcal/optim.hpp"
#include "tafcal/rng.hpp"
#include "tafcal/spectral.hpp"

// Style calibration and amplitude augmentation: source prototype estimation,
// train/test-time convex calibration of amplitude maps toward the prototype,
// amplitude mixing between batch samples, and the composite differentiable
// style layer that strings them between forward/inverse transforms.

namespace tafcal {

// ---------------------------------------------------------------------------
// Prototype bank
// ---------------------------------------------------------------------------

// Running sum + count over source amplitude maps. Algebraically identical to
// storing every batch and averaging, with O(C*H*W) memory. finalize() closes
// an epoch: callers keep seeing the previous epoch's prototype while the
// next epoch accumulates.
template <typename T>
class PrototypeBank {
 public:
  void update(const AmplitudeMap<T>& amps) {
    const Shape4 s = amps.shape();
    if (count_ == 0 && sum_.empty()) {
      sum_ = Tensor4<T>(1, s.c, s.h, s.w);
    }
    if (s.c != sum_.c() || s.h != sum_.h() || s.w != sum_.w())
      fail(ErrorCategory::invalid_argument,
           "prototype bank: amplitude shape " + s.str() + " does not match bank " +
               sum_.shape().str());
    for (int n = 0; n < s.n; ++n) {
      const T* src = amps.values.plane(n, 0);
      T* dst = sum_.data();
      const std::size_t m = sum_.size();
      for (std::size_t i = 0; i < m; ++i) dst[i] += src[i];
    }
    count_ += s.n;
  }

  long count() const { return count_; }

  // Mean over everything accumulated since the last finalize; stores it as
  // the current prototype tagged with `epoch` and resets the accumulator.
  AmplitudeMap<T> finalize(int epoch) {
    if (count_ == 0)
      fail(ErrorCategory::state, "prototype bank: finalize with no accumulated amplitudes");
    Tensor4<T> proto(sum_.shape());
    const T inv = T(1) / static_cast<T>(count_);
    for (std::size_t i = 0; i < sum_.size(); ++i) proto[i] = sum_[i] * inv;
    proto_ = proto;
    proto_epoch_ = epoch;
    sum_.fill(T(0));
    count_ = 0;
    return AmplitudeMap<T>{std::move(proto)};
  }

  bool has_prototype() const { return proto_.has_value(); }

  const Tensor4<T>& prototype() const {
    if (!proto_) fail(ErrorCategory::state, "prototype bank: no finalized prototype");
    return *proto_;
  }

  int prototype_epoch() const { return proto_epoch_; }

  void set_prototype(Tensor4<T> proto, int epoch) {
    proto_ = std::move(proto);
    proto_epoch_ = epoch;
  }

 private:
  Tensor4<T> sum_;  // (1, C, H, W)
  long count_ = 0;
  std::optional<Tensor4<T>> proto_;
  int proto_epoch_ = -1;
};

// ---------------------------------------------------------------------------
// Tensor-level calibration / mixing
// ---------------------------------------------------------------------------

// strength * proto + (1 - strength) * amp, prototype broadcast over the batch.
template <typename T>
AmplitudeMap<T> calibrate(const AmplitudeMap<T>& amp, const AmplitudeMap<T>& proto,
                          double strength) {
  if (!(strength >= 0.0 && strength <= 1.0))
    fail(ErrorCategory::invalid_argument,
         "calibrate: strength " + std::to_string(strength) + " outside [0, 1]");
  const Shape4 as = amp.shape();
  const Shape4 ps = proto.shape();
  if (ps.n != 1 || ps.c != as.c || ps.h != as.h || ps.w != as.w)
    fail(ErrorCategory::invalid_argument,
         "calibrate: prototype " + ps.str() + " does not broadcast over " + as.str());
  Tensor4<T> out(as);
  const T s = static_cast<T>(strength);
  const T r = T(1) - s;
  const T* pp = proto.values.data();
  const std::size_t plane = proto.values.size();
  for (int n = 0; n < as.n; ++n) {
    const T* a = amp.values.plane(n, 0);
    T* o = out.plane(n, 0);
    for (std::size_t i = 0; i < plane; ++i) o[i] = s * pp[i] + r * a[i];
  }
  return AmplitudeMap<T>{std::move(out)};
}

// delta * a + (1 - delta) * b; delta = 0 swaps in the partner outright.
template <typename T>
AmplitudeMap<T> aaf_mix(const AmplitudeMap<T>& a, const AmplitudeMap<T>& b, double delta) {
  require_same_shape(a.values, b.values, "aaf_mix");
  if (!(delta >= 0.0 && delta <= 1.0))
    fail(ErrorCategory::invalid_argument,
         "aaf_mix: delta " + std::to_string(delta) + " outside [0, 1]");
  Tensor4<T> out(a.shape());
  const T d = static_cast<T>(delta);
  const T r = T(1) - d;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d * a.values[i] + r * b.values[i];
  return AmplitudeMap<T>{std::move(out)};
}

// Gaussian control prototype: i.i.d. bins from a normal fit to the true
// prototype's mean/std, clamped at 0.
template <typename T>
Tensor4<T> random_prototype_like(const Tensor4<T>& proto, Rng& rng) {
  double mean = 0.0;
  for (std::size_t i = 0; i < proto.size(); ++i) mean += static_cast<double>(proto[i]);
  mean /= static_cast<double>(proto.size());
  double var = 0.0;
  for (std::size_t i = 0; i < proto.size(); ++i) {
    const double d = static_cast<double>(proto[i]) - mean;
    var += d * d;
  }
  var /= static_cast<double>(proto.size());
  const double sd = std::sqrt(var);
  Tensor4<T> out(proto.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(std::max(0.0, mean + sd * rng.normal()));
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable spectral primitives
// ---------------------------------------------------------------------------

namespace style_detail {

// dz += Re(unnormalized inverse transform of (g_re + j g_im)); either input
// may be null. This is the exact adjoint of the forward transform.
template <typename T>
void accumulate_spectrum_adjoint(const Tensor4<T>* g_re, const Tensor4<T>* g_im,
                                 Tensor4<T>& dz) {
  const Shape4 s = dz.shape();
  std::vector<fft_detail::cplx> buf(dz.plane_size());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* re = g_re ? g_re->plane(n, c) : nullptr;
      const T* im = g_im ? g_im->plane(n, c) : nullptr;
      for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = fft_detail::cplx(re ? static_cast<double>(re[i]) : 0.0,
                                  im ? static_cast<double>(im[i]) : 0.0);
      fft_detail::transform_plane(buf.data(), s.h, s.w, /*inverse=*/true);
      T* d = dz.plane(n, c);
      for (std::size_t i = 0; i < buf.size(); ++i) d[i] += static_cast<T>(buf[i].real());
    }
}

constexpr double kPolarEps = 1e-12;  // backward-only guard at zero magnitude

}  // namespace style_detail

// Forward transform as two graph nodes (real part, imaginary part).
template <typename T>
std::pair<Var<T>, Var<T>> spectrum_nodes(const Var<T>& z) {
  Spectrum<T> s = dft2d(z.value());
  Var<T> re = make_op<T>(std::move(s.re), {z}, [](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    style_detail::accumulate_spectrum_adjoint<T>(&self.grad, nullptr, p->grad);
  });
  Var<T> im = make_op<T>(std::move(s.im), {z}, [](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    style_detail::accumulate_spectrum_adjoint<T>(nullptr, &self.grad, p->grad);
  });
  return {std::move(re), std::move(im)};
}

// (amplitude, phase) from (re, im). The forward values are exact; the
// backward rule guards the magnitude with a small epsilon so zero bins do
// not produce NaN adjoints.
template <typename T>
std::pair<Var<T>, Var<T>> polar_nodes(const Var<T>& re, const Var<T>& im) {
  require_same_shape(re.value(), im.value(), "polar_nodes");
  Tensor4<T> amp(re.value().shape());
  Tensor4<T> phase(re.value().shape());
  for (std::size_t i = 0; i < amp.size(); ++i) {
    const double r = static_cast<double>(re.value()[i]);
    const double m = static_cast<double>(im.value()[i]);
    amp[i] = static_cast<T>(std::hypot(r, m));
    phase[i] = static_cast<T>(phase_of(r, m));
  }
  Var<T> amp_v = make_op<T>(std::move(amp), {re, im}, [](Node<T>& self) {
    auto& pre = self.parents[0];
    auto& pim = self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double r = static_cast<double>(pre->value[i]);
      const double m = static_cast<double>(pim->value[i]);
      const double inv = 1.0 / std::sqrt(r * r + m * m + style_detail::kPolarEps);
      const double g = static_cast<double>(self.grad[i]);
      if (pre->requires_grad) pre->grad[i] += static_cast<T>(g * r * inv);
      if (pim->requires_grad) pim->grad[i] += static_cast<T>(g * m * inv);
    }
  });
  Var<T> phase_v = make_op<T>(std::move(phase), {re, im}, [](Node<T>& self) {
    auto& pre = self.parents[0];
    auto& pim = self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double r = static_cast<double>(pre->value[i]);
      const double m = static_cast<double>(pim->value[i]);
      const double inv = 1.0 / (r * r + m * m + style_detail::kPolarEps);
      const double g = static_cast<double>(self.grad[i]);
      if (pre->requires_grad) pre->grad[i] += static_cast<T>(-g * m * inv);
      if (pim->requires_grad) pim->grad[i] += static_cast<T>(g * r * inv);
    }
  });
  return {std::move(amp_v), std::move(phase_v)};
}

// Row mixing for AAF: out[i] = delta * amp[i] + (1 - delta) * amp[pairing[i]].
// Gradients flow through both operands.
template <typename T>
Var<T> mix_rows(const Var<T>& amp, const std::vector<int>& pairing, double delta) {
  const Shape4 s = amp.value().shape();
  if (static_cast<int>(pairing.size()) != s.n)
    fail(ErrorCategory::invalid_argument,
         "mix_rows: pairing size " + std::to_string(pairing.size()) + " for batch " +
             std::to_string(s.n));
  if (!(delta >= 0.0 && delta <= 1.0))
    fail(ErrorCategory::invalid_argument,
         "mix_rows: delta " + std::to_string(delta) + " outside [0, 1]");
  Tensor4<T> out(s);
  const std::size_t row = out.size() / static_cast<std::size_t>(s.n);
  const T d = static_cast<T>(delta);
  const T r = T(1) - d;
  for (int n = 0; n < s.n; ++n) {
    const T* a = amp.value().data() + static_cast<std::size_t>(n) * row;
    const T* b = amp.value().data() + static_cast<std::size_t>(pairing[static_cast<std::size_t>(n)]) * row;
    T* o = out.data() + static_cast<std::size_t>(n) * row;
    for (std::size_t i = 0; i < row; ++i) o[i] = d * a[i] + r * b[i];
  }
  return make_op<T>(std::move(out), {amp}, [pairing, d, r, row](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    const int n_rows = self.value.shape().n;
    for (int n = 0; n < n_rows; ++n) {
      const T* g = self.grad.data() + static_cast<std::size_t>(n) * row;
      T* da = p->grad.data() + static_cast<std::size_t>(n) * row;
      T* db = p->grad.data() + static_cast<std::size_t>(pairing[static_cast<std::size_t>(n)]) * row;
      for (std::size_t i = 0; i < row; ++i) {
        da[i] += d * g[i];
        db[i] += r * g[i];
      }
    }
  });
}

// Calibration toward a constant prototype: strength * proto + (1 - strength) * amp.
// The prototype is a cross-epoch statistic and contributes no gradient.
template <typename T>
Var<T> mix_toward(const Var<T>& amp, const Tensor4<T>& proto, double strength) {
  if (!(strength >= 0.0 && strength <= 1.0))
    fail(ErrorCategory::invalid_argument,
         "mix_toward: strength " + std::to_string(strength) + " outside [0, 1]");
  const Shape4 as = amp.value().shape();
  const Shape4 ps = proto.shape();
  if (ps.n != 1 || ps.c != as.c || ps.h != as.h || ps.w != as.w)
    fail(ErrorCategory::invalid_argument,
         "mix_toward: prototype " + ps.str() + " does not broadcast over " + as.str());
  Tensor4<T> out(as);
  const T s = static_cast<T>(strength);
  const T r = T(1) - s;
  const std::size_t plane = proto.size();
  for (int n = 0; n < as.n; ++n) {
    const T* a = amp.value().plane(n, 0);
    T* o = out.plane(n, 0);
    for (std::size_t i = 0; i < plane; ++i) o[i] = s * proto[i] + r * a[i];
  }
  return make_op<T>(std::move(out), {amp}, [r](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += r * self.grad[i];
  });
}

// Inverse transform of amp * exp(j * phase), real part. The imaginary
// residual is checked against `tolerance` (mixing symmetric amplitudes keeps
// the signal real analytically; a large residual is an integrity failure).
template <typename T>
Var<T> reconstruct_node(const Var<T>& amp, const Var<T>& phase,
                        double tolerance = default_reconstruct_tolerance<T>()) {
  require_same_shape(amp.value(), phase.value(), "reconstruct_node");
  const Shape4 s = amp.value().shape();
  const double scale = 1.0 / (static_cast<double>(s.h) * static_cast<double>(s.w));
  Tensor4<T> out(s);
  double residual = 0.0;
  {
    std::vector<fft_detail::cplx> buf(out.plane_size());
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* a = amp.value().plane(n, c);
        const T* p = phase.value().plane(n, c);
        for (std::size_t i = 0; i < buf.size(); ++i) {
          const double av = static_cast<double>(a[i]);
          const double pv = static_cast<double>(p[i]);
          buf[i] = fft_detail::cplx(av * std::cos(pv), av * std::sin(pv));
        }
        fft_detail::transform_plane(buf.data(), s.h, s.w, /*inverse=*/true);
        T* o = out.plane(n, c);
        for (std::size_t i = 0; i < buf.size(); ++i) {
          o[i] = static_cast<T>(buf[i].real() * scale);
          residual = std::max(residual, std::abs(buf[i].imag() * scale));
        }
      }
  }
  if (residual > tolerance)
    fail(ErrorCategory::numeric,
         "style layer reconstruct: imaginary residual " + std::to_string(residual) +
             " exceeds tolerance " + std::to_string(tolerance));

  auto backprop = [scale](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pp = self.parents[1];
    const Shape4 s2 = self.value.shape();
    std::vector<fft_detail::cplx> buf(self.value.plane_size());
    for (int n = 0; n < s2.n; ++n)
      for (int c = 0; c < s2.c; ++c) {
        const T* g = self.grad.plane(n, c);
        for (std::size_t i = 0; i < buf.size(); ++i)
          buf[i] = fft_detail::cplx(static_cast<double>(g[i]), 0.0);
        // adjoint of the normalized inverse transform is DFT/(HW)
        fft_detail::transform_plane(buf.data(), s2.h, s2.w, /*inverse=*/false);
        const T* a = pa->value.plane(n, c);
        const T* p = pp->value.plane(n, c);
        T* da = pa->requires_grad ? pa->grad.plane(n, c) : nullptr;
        T* dp = pp->requires_grad ? pp->grad.plane(n, c) : nullptr;
        for (std::size_t i = 0; i < buf.size(); ++i) {
          const double gre = buf[i].real() * scale;
          const double gim = buf[i].imag() * scale;
          const double pv = static_cast<double>(p[i]);
          const double cp = std::cos(pv), sp = std::sin(pv);
          if (da) da[i] += static_cast<T>(gre * cp + gim * sp);
          if (dp) dp[i] += static_cast<T>(static_cast<double>(a[i]) * (-gre * sp + gim * cp));
        }
      }
  };
  return make_op<T>(std::move(out), {amp, phase}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// Style layer
// ---------------------------------------------------------------------------

enum class StyleMode { train, test };

struct CalibrationConfig {
  double eta = 0.5;             // train-time strength
  double tau = 0.5;             // test-time strength (probability 1 at test)
  double p_cal = 0.5;           // train-time activation probability
  double stage_fraction = 0.7;  // TF-Cal trains after this fraction of epochs
  int insertion_after_block = 2;
};

struct AafConfig {
  enum class Mode { mix, swap };
  double alpha = 0.2;  // Beta(alpha, alpha)
  double p_aaf = 0.5;
  Mode mode = Mode::mix;
};

// Per-batch resolved coins. Drawn once per mini-batch; freezing these makes
// the layer a fixed differentiable function (used by the gradient checks).
struct StyleDecisions {
  bool apply_aaf = false;
  double delta = 0.0;
  std::vector<int> pairing;
  bool apply_cal = false;
  double strength = 0.0;
};

struct StyleLayerOptions {
  bool bank_pre_aaf = true;       // collect source stats before augmentation
  bool exclusive_aaf_cal = false;  // allow at most one mechanism per batch
  double residual_tol = 1e-3;
};

struct EpochContext {
  int epoch = 0;
  int total_epochs = 1;
};

template <typename T>
StyleDecisions draw_style_decisions(StyleMode mode, const CalibrationConfig& cal,
                                    const AafConfig& aaf, const PrototypeBank<T>& bank,
                                    EpochContext ec, int batch, Rng& rng,
                                    bool exclusive_aaf_cal) {
  StyleDecisions d;
  if (mode == StyleMode::test) {
    // probability 1 at test time; tau = 0 degenerates to a pure roundtrip
    d.apply_cal = cal.tau > 0.0;
    d.strength = cal.tau;
    return d;
  }
  const double u_aaf = rng.uniform();
  if (u_aaf < aaf.p_aaf) {
    d.apply_aaf = true;
    d.delta = aaf.mode == AafConfig::Mode::swap ? 0.0 : rng.beta(aaf.alpha, aaf.alpha);
    d.pairing = rng.permutation(batch);
  }
  if (ec.epoch >= stage_epoch(cal.stage_fraction, ec.total_epochs) && bank.has_prototype()) {
    const double u_cal = rng.uniform();
    if (u_cal < cal.p_cal) {
      d.apply_cal = true;
      d.strength = cal.eta;
    }
  }
  if (exclusive_aaf_cal && d.apply_aaf && d.apply_cal) d.apply_aaf = false;  // TF-Cal wins
  return d;
}

// Deterministic core: transforms, optional bank recording, AAF, calibration,
// inverse transform. The phase passes through untouched.
template <typename T>
Var<T> style_layer_apply(const Var<T>& z, StyleMode mode, const StyleDecisions& d,
                         std::type_identity_t<PrototypeBank<T>*> bank,
                         std::type_identity_t<const Tensor4<T>*> prototype,
                         const StyleLayerOptions& opts) {
  auto [re, im] = spectrum_nodes(z);
  auto [amp, phase] = polar_nodes(re, im);
  Var<T> cur = amp;
  if (mode == StyleMode::train && bank && opts.bank_pre_aaf)
    bank->update(AmplitudeMap<T>{cur.value()});
  if (d.apply_aaf) cur = mix_rows(cur, d.pairing, d.delta);
  if (mode == StyleMode::train && bank && !opts.bank_pre_aaf)
    bank->update(AmplitudeMap<T>{cur.value()});
  if (d.apply_cal && d.strength > 0.0) {
    if (!prototype)
      fail(ErrorCategory::state, "style layer: calibration requested without a prototype");
    cur = mix_toward(cur, *prototype, d.strength);
  }
  return reconstruct_node(cur, phase, opts.residual_tol);
}

// Full style layer: draws the per-batch coins and applies the pipeline.
// Test mode with tau > 0 requires a finalized/persisted prototype
// ("uncalibrated model"); tau = 0 forces a pass-through roundtrip.
template <typename T>
Var<T> style_layer(const Var<T>& z, StyleMode mode, const CalibrationConfig& cal,
                   const AafConfig& aaf, PrototypeBank<T>& bank, Rng& rng, EpochContext ec,
                   const StyleLayerOptions& opts = {}) {
  if (mode == StyleMode::test && cal.tau > 0.0 && !bank.has_prototype())
    fail(ErrorCategory::state,
         "uncalibrated model: no persisted prototype; evaluate uncalibrated or set tau=0");
  const StyleDecisions d = draw_style_decisions(mode, cal, aaf, bank, ec,
                                                z.value().shape().n, rng, opts.exclusive_aaf_cal);
  const Tensor4<T>* proto = bank.has_prototype() ? &bank.prototype() : nullptr;
  return style_layer_apply(z, mode, d, mode == StyleMode::train ? &bank : nullptr, proto, opts);
}

}  // namespace tafcal
