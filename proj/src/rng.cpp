#include "ilab/rng.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ilab {

std::uint64_t Rng::uniform_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: n must be > 0");
    // Rejection to avoid modulo bias.
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // Box-Muller on (0,1] uniforms.
    double u1 = 1.0 - uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

std::size_t Rng::categorical(std::span<const double> weights) {
    if (weights.empty()) throw std::invalid_argument("categorical: empty weights");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w))
            throw std::invalid_argument("categorical: weights must be finite and >= 0");
        total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("categorical: weights sum to zero");
    double u = uniform01() * total;
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
        acc += weights[k];
        if (u < acc) return k;
    }
    return weights.size() - 1;
}

std::vector<std::uint32_t> Rng::permutation(std::size_t n) {
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = uniform_below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

} // namespace ilab
