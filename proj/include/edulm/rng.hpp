#pragma once

#include <cstddef>
#include <cstdint>

namespace edulm {

/// Counter-based, splittable pseudo-random generator.
///
/// Each draw is a pure function of (key, counter), so results do not depend on
/// the platform's standard library. `split` derives an independent stream
/// from an identifier, which lets callers address e.g. "epoch 3, sequence 17"
/// directly instead of threading a single mutable generator through the code.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0);

    Rng split(std::uint64_t stream_id) const;

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform integer in [0, n); n must be positive.
    std::size_t uniform_index(std::size_t n);
    /// Standard normal via Box-Muller.
    double normal();

    std::uint64_t key() const noexcept { return key_; }

   private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace edulm
