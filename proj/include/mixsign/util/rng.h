#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace mixsign {

// Counter-based generator: output i of a stream is splitmix64(key + i * phi).
// Streams are addressed by a seed plus a path of integers (split, sample,
// epoch, ...), so any substream can be produced independently of the order in
// which others are consumed.
class Rng {
public:
    Rng() = default;
    Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

    static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {});
    Rng substream(std::initializer_list<std::uint64_t> path) const;

    std::uint64_t next_u64();
    double uniform();                         // [0, 1)
    double uniform(double lo, double hi);     // [lo, hi)
    std::uint64_t below(std::uint64_t n);     // [0, n), n > 0
    int range(int lo, int hi);                // inclusive
    double normal();                          // Box-Muller, one draw per call
    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
// Stable 64-bit FNV-1a, used to turn names into stream path components.
std::uint64_t hash_name(const char* s);

}  // namespace mixsign
