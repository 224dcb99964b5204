#pragma once

// Thin RAII layer over FFTW3. Plans are created once per (kind, size) under a
// global lock and executed through the new-array interface, which FFTW allows
// from any thread. FFTW_ESTIMATE keeps plan selection (and therefore every
// output bit) independent of timing.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

namespace node::fft {

using cplx = std::complex<double>;

namespace detail {

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};

template <typename T>
using AlignedPtr = std::unique_ptr<T[], FftwFree>;

template <typename T>
AlignedPtr<T> aligned_alloc(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * (n == 0 ? 1 : n)));
  if (p == nullptr) throw std::bad_alloc();
  return AlignedPtr<T>(p);
}

enum class Kind { r2c, c2r, c2c_forward, c2c_backward };

inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// Plans live for the process lifetime.
inline fftw_plan plan_for(Kind kind, int n) {
  static std::map<std::pair<Kind, int>, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(planner_mutex());
  auto key = std::make_pair(kind, n);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  const auto half = static_cast<std::size_t>(n / 2 + 1);
  fftw_plan p = nullptr;
  switch (kind) {
    case Kind::r2c: {
      auto in = aligned_alloc<double>(static_cast<std::size_t>(n));
      auto out = aligned_alloc<fftw_complex>(half);
      p = fftw_plan_dft_r2c_1d(n, in.get(), out.get(), FFTW_ESTIMATE);
      break;
    }
    case Kind::c2r: {
      auto in = aligned_alloc<fftw_complex>(half);
      auto out = aligned_alloc<double>(static_cast<std::size_t>(n));
      p = fftw_plan_dft_c2r_1d(n, in.get(), out.get(), FFTW_ESTIMATE);
      break;
    }
    case Kind::c2c_forward:
    case Kind::c2c_backward: {
      auto in = aligned_alloc<fftw_complex>(static_cast<std::size_t>(n));
      auto out = aligned_alloc<fftw_complex>(static_cast<std::size_t>(n));
      p = fftw_plan_dft_1d(n, in.get(), out.get(),
                           kind == Kind::c2c_forward ? FFTW_FORWARD : FFTW_BACKWARD,
                           FFTW_ESTIMATE);
      break;
    }
  }
  cache.emplace(key, p);
  return p;
}

}  // namespace detail

/// Smallest n' >= n whose only prime factors are 2, 3, 5 and 7.
inline std::size_t good_size(std::size_t n) {
  if (n <= 1) return 1;
  for (std::size_t m = n;; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2u, 3u, 5u, 7u})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

/// Forward real FFT of `x` zero-padded (or truncated) to length n. Returns n/2+1 bins.
inline std::vector<cplx> rfft(std::span<const double> x, std::size_t n) {
  auto in = detail::aligned_alloc<double>(n);
  auto out = detail::aligned_alloc<fftw_complex>(n / 2 + 1);
  const std::size_t m = std::min(n, x.size());
  std::memcpy(in.get(), x.data(), m * sizeof(double));
  std::memset(in.get() + m, 0, (n - m) * sizeof(double));
  fftw_execute_dft_r2c(detail::plan_for(detail::Kind::r2c, static_cast<int>(n)), in.get(),
                       out.get());
  std::vector<cplx> result(n / 2 + 1);
  std::memcpy(static_cast<void*>(result.data()), out.get(), result.size() * sizeof(cplx));
  return result;
}

/// Inverse of rfft, normalized so irfft(rfft(x, n), n) == x.
inline std::vector<double> irfft(std::span<const cplx> spectrum, std::size_t n) {
  auto in = detail::aligned_alloc<fftw_complex>(n / 2 + 1);
  auto out = detail::aligned_alloc<double>(n);
  std::memcpy(in.get(), spectrum.data(), (n / 2 + 1) * sizeof(cplx));
  fftw_execute_dft_c2r(detail::plan_for(detail::Kind::c2r, static_cast<int>(n)), in.get(),
                       out.get());
  std::vector<double> result(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) result[i] = out[i] * scale;
  return result;
}

/// Reusable fixed-size complex transform. Not shareable between threads;
/// give each worker its own instance.
class ComplexTransform {
 public:
  ComplexTransform(std::size_t n, bool forward)
      : n_(n),
        in_(detail::aligned_alloc<fftw_complex>(n)),
        out_(detail::aligned_alloc<fftw_complex>(n)),
        plan_(detail::plan_for(forward ? detail::Kind::c2c_forward : detail::Kind::c2c_backward,
                               static_cast<int>(n))) {}

  std::size_t size() const { return n_; }

  std::span<cplx> input() { return {reinterpret_cast<cplx*>(in_.get()), n_}; }
  std::span<const cplx> output() const { return {reinterpret_cast<const cplx*>(out_.get()), n_}; }

  void execute() { fftw_execute_dft(plan_, in_.get(), out_.get()); }

 private:
  std::size_t n_;
  detail::AlignedPtr<fftw_complex> in_;
  detail::AlignedPtr<fftw_complex> out_;
  fftw_plan plan_;
};

}  // namespace node::fft
