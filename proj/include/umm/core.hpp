#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace umm {

using Vec = std::vector<double>;

// Dense row-major matrix; just enough structure for candidate sets and
// encoder layers.
struct Mat {
    std::size_t rows = 0, cols = 0;
    Vec data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    return dot(a.data(), b.data(), a.size());
}

inline double norm2(const double* a, std::size_t n) { return std::sqrt(dot(a, a, n)); }
inline double norm2(const Vec& a) { return norm2(a.data(), a.size()); }

inline Vec normalized(Vec v) {
    double n = norm2(v);
    if (!(n > 0.0)) throw std::invalid_argument("normalized: zero-norm vector");
    for (double& x : v) x /= n;
    return v;
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derives the stream seed for one epoch so reshuffles differ across epochs
// while staying reproducible from the run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t epoch) {
    return splitmix64(seed ^ splitmix64(epoch + 0x517cc1b727220a95ull));
}

// mt19937_64 with explicit uniform/normal mappings, so every draw is
// bit-reproducible independent of standard-library distribution internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    // [0, 1)
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Box-Muller; the sine branch is discarded to keep the generator stateless
    // beyond the engine itself (simplifies checkpointing).
    double normal() {
        double u1 = 1.0 - uniform01();  // (0, 1]
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t uniform_int(std::uint64_t n) { return engine_() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[uniform_int(i)]);
    }

    Vec normal_vec(std::size_t n) {
        Vec v(n);
        for (double& x : v) x = normal();
        return v;
    }

    Mat normal_mat(std::size_t r, std::size_t c) {
        Mat m(r, c);
        for (double& x : m.data) x = normal();
        return m;
    }

    Vec unit_vec(std::size_t n) { return normalized(normal_vec(n)); }

    std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (is.fail()) throw std::invalid_argument("Rng: malformed state string");
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace umm
