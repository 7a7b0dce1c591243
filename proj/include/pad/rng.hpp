#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace pad {

/// Philox4x32-10 block function (Salmon et al., SC'11). Stateless: the
/// output is a pure function of (key, counter), which makes every draw in
/// the project addressable as (seed, stream, index) and therefore
/// independent of scheduling or iteration order.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Mixes an arbitrary list of tags into a 64-bit stream id (splitmix64 chain).
std::uint64_t mix_stream(std::initializer_list<std::uint64_t> tags);

/// One logical random stream: (seed, stream) select the key space, and a
/// local block counter advances with each draw. Copies are independent
/// continuations.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64();
    /// Uniform on [0,1), 53-bit resolution.
    double uniform();
    /// Standard normal via Box-Muller; draws are paired internally.
    double normal();
    /// Uniform integer in [0, n), n >= 1 (Lemire reduction).
    std::uint64_t uniform_int(std::uint64_t n);

    void fill_normal(double* out, std::int64_t n);
    void fill_uniform(double* out, std::int64_t n);

private:
    void refill();
    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    int buf_pos_ = 4;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

namespace stream_tag {
// Fixed domain tags so streams never collide across subsystems.
constexpr std::uint64_t kInit = 0x01;
constexpr std::uint64_t kBatch = 0x02;
constexpr std::uint64_t kHindsight = 0x03;
constexpr std::uint64_t kCorruption = 0x04;
constexpr std::uint64_t kPlanCandidate = 0x05;
constexpr std::uint64_t kPlanChoice = 0x06;
constexpr std::uint64_t kEpisode = 0x07;
constexpr std::uint64_t kDataGen = 0x08;
constexpr std::uint64_t kEval = 0x09;
}  // namespace stream_tag

}  // namespace pad
