#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace savc {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_string(std::string_view s);
// Order-sensitive mix of several 64-bit words into one key.
std::uint64_t hash_words(std::initializer_list<std::uint64_t> words);

// Counter-based generator: output i is splitmix64(key + i * golden). The full
// state is (key, counter), which makes it trivial to persist and to fork.
class CounterRng {
 public:
  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
    bool operator==(const State&) const = default;
  };

  CounterRng() = default;
  explicit CounterRng(std::uint64_t key) : state_{key, 0} {}
  explicit CounterRng(State s) : state_(s) {}

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; consumes two uniforms per draw.
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  std::vector<std::size_t> permutation(std::size_t n);

  CounterRng fork(std::uint64_t salt) const;
  State state() const { return state_; }

 private:
  State state_;
};

}  // namespace savc
