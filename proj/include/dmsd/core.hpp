#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dmsd {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Error categories surfaced through the CLI exit-code contract:
// usage errors exit 1, data/artifact errors exit 2, numeric failures exit 3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A clip-shaped stack of T feature planes, each C x H x W.
// data(c, t*H*W + y*W + x); column-major storage keeps one spatial slice
// of a channel contiguous across pixels only via the row stride, so all
// heavy math goes through whole-matrix or block expressions.
template <typename Scalar>
struct SeqTensor {
  int T = 0, C = 0, H = 0, W = 0;
  MatX<Scalar> data;

  SeqTensor() = default;
  SeqTensor(int t, int c, int h, int w) : T(t), C(c), H(h), W(w), data(MatX<Scalar>::Zero(c, t * h * w)) {}

  int plane() const { return H * W; }
  auto segment(int t) { return data.middleCols(t * plane(), plane()); }
  auto segment(int t) const { return data.middleCols(t * plane(), plane()); }
  Scalar& at(int t, int c, int y, int x) { return data(c, t * plane() + y * W + x); }
  Scalar at(int t, int c, int y, int x) const { return data(c, t * plane() + y * W + x); }
  bool same_shape(const SeqTensor& o) const { return T == o.T && C == o.C && H == o.H && W == o.W; }
  bool all_finite() const { return data.allFinite(); }
};

// Deterministic RNG. std::mt19937_64 has a fully specified bit stream; the
// distributions below are hand-rolled because the standard library ones are
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : s_(seed) {}

  std::uint64_t next_u64() {
    // splitmix64; passes through the whole 2^64 state space.
    std::uint64_t z = (s_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(6.283185307179586 * u2);
    have_spare_ = true;
    return mag * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  // Derive an independent stream, e.g. one per clip.
  Rng fork(std::uint64_t salt) {
    Rng r(s_ ^ (0x517cc1b727220a95ULL * (salt + 1)));
    r.next_u64();
    return r;
  }

 private:
  std::uint64_t s_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

template <typename Scalar>
std::uint64_t hash_values(const VecX<Scalar>& v, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(v.data(), sizeof(Scalar) * static_cast<std::size_t>(v.size()), h);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// Static round-robin assignment (item i -> worker i % workers) so results can
// be reduced in a fixed order regardless of scheduling.
template <typename F>
void parallel_for(int n, int workers, F&& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mx;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w]() {
      try {
        for (int i = w; i < n; i += workers) fn(i, w);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mx);
        if (!first_error) first_error = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace dmsd
