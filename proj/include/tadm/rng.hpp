#pragma once

#include <cstdint>
#include <initializer_list>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

namespace tadm {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a tuple of tags
// (stage, step, ...), so any training step can be replayed without saved RNG state.
inline uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> tags) {
  uint64_t h = splitmix64(seed);
  for (auto tag : tags) h = splitmix64(h ^ tag);
  return h;
}

inline at::Generator make_generator(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

}  // namespace tadm
