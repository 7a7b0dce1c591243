#include "pad/rng.hpp"

#include <cmath>

namespace pad {

namespace {

constexpr std::uint32_t kPhiloxW32A = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW32B = 0xBB67AE85u;
constexpr std::uint32_t kPhiloxM4x32A = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM4x32B = 0xCD9E8D57u;

inline void mul_hilo(std::uint32_t a, std::uint32_t b, std::uint32_t* lo, std::uint32_t* hi) {
    std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    *lo = static_cast<std::uint32_t>(p);
    *hi = static_cast<std::uint32_t>(p >> 32);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t lo0, hi0, lo1, hi1;
        mul_hilo(kPhiloxM4x32A, ctr[0], &lo0, &hi0);
        mul_hilo(kPhiloxM4x32B, ctr[2], &lo1, &hi1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kPhiloxW32A;
        key[1] += kPhiloxW32B;
    }
    return ctr;
}

std::uint64_t mix_stream(std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = 0x243F6A8885A308D3ull;
    for (std::uint64_t t : tags) h = splitmix64(h ^ t);
    return h;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream) : stream_(stream) {
    std::uint64_t k = splitmix64(seed);
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

void RngStream::refill() {
    std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
        static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
    buf_ = philox4x32(ctr, key_);
    ++block_;
    buf_pos_ = 0;
}

std::uint64_t RngStream::next_u64() {
    if (buf_pos_ > 2) refill();
    std::uint64_t lo = buf_[static_cast<size_t>(buf_pos_)];
    std::uint64_t hi = buf_[static_cast<size_t>(buf_pos_) + 1];
    buf_pos_ += 2;
    return lo | (hi << 32);
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_normal_;
    }
    // Box-Muller; u1 shifted away from zero so log stays finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_normal_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
    // Lemire multiply-shift; bias is O(2^-64), irrelevant at our draw counts.
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(m >> 64);
}

void RngStream::fill_normal(double* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = normal();
}

void RngStream::fill_uniform(double* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = uniform();
}

}  // namespace pad
