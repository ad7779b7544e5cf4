#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vpl {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x; y -= o.y; z -= o.z;
    return *this;
  }
  Vec3 operator-() const { return {-x, -y, -z}; }
};

inline double dot(const Vec3& a, const Vec3& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) { return a / norm(a); }

// All randomness in the project funnels through this; distributions are
// hand-rolled so results do not depend on the standard library version.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // in [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    // rejection-free enough at our scales; use multiply-shift
    return std::uint64_t((__uint128_t(next_u64()) * n) >> 64);
  }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Independent child stream; used to keep optional features (vpl sampling,
  // augmentation) from perturbing the main batch stream.
  Rng fork(std::uint64_t tag) const {
    Rng r(state_ ^ (0xd1342543de82ef95ull * (tag + 1)));
    r.next_u64();
    return r;
  }

  // Raw stream state for exact training resume: {state, have_spare,
  // bit pattern of the spare gaussian}.
  std::array<std::uint64_t, 3> raw_state() const {
    return {state_, have_spare_ ? 1ull : 0ull, std::bit_cast<std::uint64_t>(spare_)};
  }
  void set_raw_state(const std::array<std::uint64_t, 3>& s) {
    state_ = s[0];
    have_spare_ = s[1] != 0;
    spare_ = std::bit_cast<double>(s[2]);
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0;
};

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a computation produced invalid numbers (as opposed to invalid
// inputs or configuration); maps to a distinct process exit code in the CLI.
struct NumericalError : Error {
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};

inline double deg2rad(double d) { return d * M_PI / 180.0; }

}  // namespace vpl
