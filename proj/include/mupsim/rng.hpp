#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace mupsim {

// splitmix64: used to derive independent substream seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t substream_seed(std::uint64_t master, const std::string& name, std::uint64_t index = 0);

// Inverse standard normal CDF (Wichura's AS241, double precision).
double inverse_normal_cdf(double p);

// Radical-inverse / Halton sequence value for 1-based index in the given base.
double halton_value(std::uint64_t index, unsigned base);

// Deterministic random stream. All sampling goes through the inverse-CDF of
// xoshiro-style uniforms so results are bit-identical across platforms and
// independent of the standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed == 0 ? 0x106689d45497fdb5ULL : seed) {
        // warm up
        for (int i = 0; i < 4; ++i) next();
    }

    std::uint64_t next() { return splitmix64(state_); }

    // Uniform on (0,1), never exactly 0 or 1.
    double uniform() {
        return (static_cast<double>(next() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean = 0.0, double sd = 1.0) {
        return mean + sd * inverse_normal_cdf(uniform());
    }

    double lognormal(double mean_log, double sd_log) { return std::exp(normal(mean_log, sd_log)); }

    // Inversion sampler; fine for the small means used here.
    int poisson(double mean);

    // Index into a discrete distribution given unnormalized weights.
    int categorical(const double* weights, int n);

  private:
    std::uint64_t state_;
};

}  // namespace mupsim
