#pragma once

#include <cstdint>
#include <random>

namespace whiten {

/// splitmix64 step; fans one root seed out into independent stream seeds so
/// that adding a consumer never perturbs the draws of its siblings.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

/// Seeded generator with hand-rolled distributions. mt19937_64 output is
/// pinned by the standard; std:: distributions are not, so uniform/normal
/// are implemented here to keep runs bit-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), n > 0.
  int uniform_int(int n);

  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace whiten
