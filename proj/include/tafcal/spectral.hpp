#pragma once

#include <cmath>
#include <complex>
#include <utility>
#include <vector>

#include "tafcal/errors.hpp"
#include "tafcal/tensor.hpp"

// Per-channel 2D discrete Fourier transform of feature tensors and the
// amplitude/phase decomposition built on top of it.
//
// Conventions, fixed for the whole toolkit:
//   forward   X(m,n) = sum_{h,w} z(h,w) exp(-j 2pi (mh/H + nw/W))   (unnormalized)
//   inverse   z(h,w) = (1/(HW)) sum_{m,n} X(m,n) exp(+j 2pi (mh/H + nw/W))
//
// Transform arithmetic runs in double regardless of the tensor scalar; only
// storage rounds to the run precision.

namespace tafcal {

namespace fft_detail {

using cplx = std::complex<double>;

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, unnormalized, in place. sign = -1 forward.
inline void fft_pow2(cplx* a, int n, int stride, double sign) {
  if (n == 1) return;
  // bit-reversal permutation
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i * stride], a[j * stride]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * M_PI / len;
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        cplx u = a[(i + k) * stride];
        cplx v = a[(i + k + len / 2) * stride] * w;
        a[(i + k) * stride] = u + v;
        a[(i + k + len / 2) * stride] = u - v;
        w *= wlen;
      }
    }
  }
}

// Direct summation of the defining sum, unnormalized. Used for lengths that
// are not powers of two; desk-scale sizes keep the O(n^2) cost irrelevant.
inline void dft_direct(const cplx* in, cplx* out, int n, int stride, double sign) {
  for (int m = 0; m < n; ++m) {
    cplx acc(0.0, 0.0);
    for (int h = 0; h < n; ++h) {
      const double ang = sign * 2.0 * M_PI * static_cast<double>(m) * static_cast<double>(h) /
                         static_cast<double>(n);
      acc += in[h * stride] * cplx(std::cos(ang), std::sin(ang));
    }
    out[m] = acc;
  }
}

inline void transform_line(cplx* a, int n, int stride, double sign, std::vector<cplx>& scratch) {
  if (is_pow2(n)) {
    fft_pow2(a, n, stride, sign);
    return;
  }
  scratch.resize(static_cast<std::size_t>(n));
  dft_direct(a, scratch.data(), n, stride, sign);
  for (int i = 0; i < n; ++i) a[i * stride] = scratch[static_cast<std::size_t>(i)];
}

// 2D transform of one H x W plane, row-major, unnormalized either direction.
// inverse=false uses exp(-j...), inverse=true uses exp(+j...).
inline void transform_plane(cplx* plane, int h, int w, bool inverse) {
  const double sign = inverse ? +1.0 : -1.0;
  std::vector<cplx> scratch;
  for (int r = 0; r < h; ++r) transform_line(plane + static_cast<std::size_t>(r) * w, w, 1, sign, scratch);
  for (int col = 0; col < w; ++col) transform_line(plane + col, h, w, sign, scratch);
}

}  // namespace fft_detail

template <typename T>
struct Spectrum {
  Tensor4<T> re;
  Tensor4<T> im;

  const Shape4& shape() const { return re.shape(); }
};

// Nonnegative magnitudes; symmetric when derived from a real tensor.
template <typename T>
struct AmplitudeMap {
  Tensor4<T> values;

  const Shape4& shape() const { return values.shape(); }
};

// Angles in (-pi, pi]; antisymmetric modulo 2pi when derived from a real tensor.
template <typename T>
struct PhaseMap {
  Tensor4<T> values;

  const Shape4& shape() const { return values.shape(); }
};

// Loads one (n, c) plane of a real tensor into a complex work buffer.
template <typename T>
void load_plane(const Tensor4<T>& z, int n, int c, std::vector<fft_detail::cplx>& buf) {
  const T* p = z.plane(n, c);
  const std::size_t m = z.plane_size();
  buf.resize(m);
  for (std::size_t i = 0; i < m; ++i) buf[i] = fft_detail::cplx(static_cast<double>(p[i]), 0.0);
}

template <typename T>
Spectrum<T> dft2d(const Tensor4<T>& z) {
  Spectrum<T> s{Tensor4<T>(z.shape()), Tensor4<T>(z.shape())};
  std::vector<fft_detail::cplx> buf;
  for (int n = 0; n < z.n(); ++n) {
    for (int c = 0; c < z.c(); ++c) {
      load_plane(z, n, c, buf);
      fft_detail::transform_plane(buf.data(), z.h(), z.w(), /*inverse=*/false);
      T* re = s.re.plane(n, c);
      T* im = s.im.plane(n, c);
      for (std::size_t i = 0; i < buf.size(); ++i) {
        re[i] = static_cast<T>(buf[i].real());
        im[i] = static_cast<T>(buf[i].imag());
      }
    }
  }
  return s;
}

inline double phase_of(double re, double im) {
  if (re == 0.0 && im == 0.0) return 0.0;  // zero magnitude: phase 0 by convention
  double ph = std::atan2(im, re);
  if (ph <= -M_PI) ph = M_PI;  // keep the range (-pi, pi]
  return ph;
}

template <typename T>
std::pair<AmplitudeMap<T>, PhaseMap<T>> decompose(const Spectrum<T>& s) {
  require_same_shape(s.re, s.im, "decompose");
  AmplitudeMap<T> amp{Tensor4<T>(s.shape())};
  PhaseMap<T> ph{Tensor4<T>(s.shape())};
  for (std::size_t i = 0; i < s.re.size(); ++i) {
    const double re = static_cast<double>(s.re[i]);
    const double im = static_cast<double>(s.im[i]);
    amp.values[i] = static_cast<T>(std::hypot(re, im));
    ph.values[i] = static_cast<T>(phase_of(re, im));
  }
  return {std::move(amp), std::move(ph)};
}

template <typename T>
double default_reconstruct_tolerance() {
  return sizeof(T) == 4 ? 1e-3 : 1e-8;
}

// Inverse transform of amp * exp(j*phase); returns the real part. A batch-1
// amplitude (prototype shape) broadcasts across the phase batch. The largest
// imaginary residual is written to *imag_residual_out when given, and a
// residual above the tolerance is a numerical-integrity error: convex
// amplitude mixes preserve conjugate symmetry analytically, so a large
// residual means the inputs were not a real signal's decomposition.
template <typename T>
Tensor4<T> reconstruct(const AmplitudeMap<T>& amp, const PhaseMap<T>& phase,
                       double* imag_residual_out = nullptr,
                       double tolerance = default_reconstruct_tolerance<T>()) {
  const Shape4& ps = phase.shape();
  const Shape4& as = amp.shape();
  const bool broadcast = as.n == 1 && ps.n >= 1;
  if (!(as == ps || (broadcast && as.c == ps.c && as.h == ps.h && as.w == ps.w)))
    fail(ErrorCategory::invalid_argument,
         "reconstruct: amplitude " + as.str() + " does not match phase " + ps.str());

  Tensor4<T> out(ps);
  const double scale = 1.0 / (static_cast<double>(ps.h) * static_cast<double>(ps.w));
  double residual = 0.0;
  std::vector<fft_detail::cplx> buf(out.plane_size());
  for (int n = 0; n < ps.n; ++n) {
    const int an = broadcast ? 0 : n;
    for (int c = 0; c < ps.c; ++c) {
      const T* a = amp.values.plane(an, c);
      const T* p = phase.values.plane(n, c);
      for (std::size_t i = 0; i < buf.size(); ++i) {
        const double av = static_cast<double>(a[i]);
        const double pv = static_cast<double>(p[i]);
        buf[i] = fft_detail::cplx(av * std::cos(pv), av * std::sin(pv));
      }
      fft_detail::transform_plane(buf.data(), ps.h, ps.w, /*inverse=*/true);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < buf.size(); ++i) {
        o[i] = static_cast<T>(buf[i].real() * scale);
        residual = std::max(residual, std::abs(buf[i].imag() * scale));
      }
    }
  }
  if (imag_residual_out) *imag_residual_out = residual;
  if (residual > tolerance)
    fail(ErrorCategory::numeric,
         "reconstruct: imaginary residual " + std::to_string(residual) +
             " exceeds tolerance " + std::to_string(tolerance));
  return out;
}

}  // namespace tafcal
