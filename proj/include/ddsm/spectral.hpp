#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "ddsm/domain.hpp"
#include "ddsm/error.hpp"

namespace ddsm {

// Fourier coefficients of a trace viewed as an L-periodic function of arc
// length: trace(s) = sum_k c_k exp(2 pi i k s / L) for |k| <= cutoff. For an
// even sample count the unpaired Nyquist coefficient is kept separately so
// that the transform stays invertible.
struct BoundarySpectrum {
  std::vector<std::complex<double>> coefficients;  // c_{-cutoff} .. c_{cutoff}
  int cutoff = 0;
  std::complex<double> nyquist{0.0, 0.0};
  bool has_nyquist = false;
  double period = 0.0;
  std::size_t samples = 0;

  std::complex<double> at(int k) const {
    if (k < -cutoff || k > cutoff) return {0.0, 0.0};
    return coefficients[static_cast<std::size_t>(k + cutoff)];
  }
  std::complex<double>& at(int k) { return coefficients[static_cast<std::size_t>(k + cutoff)]; }
};

namespace detail {

// Values of the trace on M equispaced arc positions starting at position 0.
inline std::vector<double> uniform_samples(const BoundaryTrace& t) {
  if (t.loop->uniform) return t.values;
  const std::size_t m = t.size();
  std::vector<double> out(m);
  for (std::size_t q = 0; q < m; ++q)
    out[q] = interpolate_fraction(t, static_cast<double>(q) / static_cast<double>(m));
  return out;
}

inline double frequency(int k, double period) { return 2.0 * std::numbers::pi * k / period; }

}  // namespace detail

inline BoundarySpectrum to_spectrum(const BoundaryTrace& t) {
  const std::size_t m = t.size();
  if (m == 0) throw ConfigError("spectrum of an empty trace");
  const std::vector<double> v = detail::uniform_samples(t);
  std::vector<std::complex<double>> full;
  Eigen::FFT<double> fft;
  fft.fwd(full, v);

  BoundarySpectrum s;
  s.period = t.loop->length;
  s.samples = m;
  s.cutoff = static_cast<int>((m + 1) / 2) - 1;
  s.coefficients.resize(static_cast<std::size_t>(2 * s.cutoff + 1));
  const double inv = 1.0 / static_cast<double>(m);
  for (int k = -s.cutoff; k <= s.cutoff; ++k) {
    const std::size_t idx = k >= 0 ? static_cast<std::size_t>(k) : m - static_cast<std::size_t>(-k);
    s.at(k) = full[idx] * inv;
  }
  if (m % 2 == 0) {
    s.has_nyquist = true;
    s.nyquist = full[m / 2] * inv;
  }
  return s;
}

// Inverse transform evaluated on the loop's own sample positions.
inline BoundaryTrace from_spectrum(const BoundarySpectrum& s, const std::shared_ptr<const BoundaryLoop>& loop) {
  const std::size_t m = loop->size();
  BoundaryTrace out(loop);
  if (loop->uniform && m == s.samples) {
    std::vector<std::complex<double>> full(m, {0.0, 0.0});
    for (int k = -s.cutoff; k <= s.cutoff; ++k) {
      const std::size_t idx = k >= 0 ? static_cast<std::size_t>(k) : m - static_cast<std::size_t>(-k);
      full[idx] = s.at(k) * static_cast<double>(m);
    }
    if (s.has_nyquist) full[m / 2] = s.nyquist * static_cast<double>(m);
    std::vector<double> v;
    Eigen::FFT<double> fft;
    fft.inv(v, full);
    out.values = std::move(v);
    return out;
  }
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t q = 0; q < m; ++q) {
    const double t = two_pi * loop->positions[q] / s.period;
    double acc = s.at(0).real();
    for (int k = 1; k <= s.cutoff; ++k) acc += 2.0 * (s.at(k) * std::polar(1.0, k * t)).real();
    if (s.has_nyquist) acc += (s.nyquist * std::polar(1.0, static_cast<double>(s.samples / 2) * t)).real();
    out.values[q] = acc;
  }
  return out;
}

// Spectral power of the surface Laplacian: c_k -> (2 pi |k| / L)^{2 gamma} c_k.
// The mean and the Nyquist mode are kept only for gamma == 0.
inline BoundarySpectrum frac_laplacian(BoundarySpectrum s, double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("fractional power must be non-negative");
  if (gamma == 0.0) return s;
  for (int k = -s.cutoff; k <= s.cutoff; ++k) {
    const double w = k == 0 ? 0.0 : std::pow(std::abs(detail::frequency(k, s.period)), 2.0 * gamma);
    s.at(k) *= w;
  }
  s.nyquist = {0.0, 0.0};
  return s;
}

inline BoundaryTrace frac_laplacian(const BoundaryTrace& t, double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("fractional power must be non-negative");
  if (gamma == 0.0) return t;
  return from_spectrum(frac_laplacian(to_spectrum(t), gamma), t.loop);
}

inline double duality_product(const BoundaryTrace& eta, const BoundaryTrace& data, double gamma) {
  require_same_loop(eta, data);
  return boundary_inner(frac_laplacian(eta, gamma), data);
}

// |trace|_{H^{3/2}} = (sum_{k != 0} |2 pi k / L|^3 |c_k|^2 L)^{1/2}.
inline double seminorm_h32(const BoundarySpectrum& s) {
  double acc = 0.0;
  for (int k = 1; k <= s.cutoff; ++k) {
    const double w = std::pow(detail::frequency(k, s.period), 3.0);
    acc += w * (std::norm(s.at(k)) + std::norm(s.at(-k)));
  }
  return std::sqrt(acc * s.period);
}

inline double seminorm_h32(const BoundaryTrace& t) { return seminorm_h32(to_spectrum(t)); }

// L * sum |c_k|^2 including the Nyquist mode; equals the squared L2 norm for
// traces on uniform loops.
inline double spectral_energy(const BoundarySpectrum& s) {
  double acc = 0.0;
  for (const auto& c : s.coefficients) acc += std::norm(c);
  acc += std::norm(s.nyquist);
  return acc * s.period;
}

}  // namespace ddsm
