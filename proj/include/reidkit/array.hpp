#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "reidkit/error.hpp"

namespace reidkit {

/// Dense row-major H x W array.
template <class T>
struct Array2 {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Array2() = default;
  Array2(int h, int w, T fill = T{})
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  T& operator()(int h, int w) { return data[static_cast<std::size_t>(h) * width + w]; }
  const T& operator()(int h, int w) const {
    return data[static_cast<std::size_t>(h) * width + w];
  }
  std::size_t size() const { return data.size(); }
  bool operator==(const Array2&) const = default;
};

/// Dense H x W x C array laid out row-major with the channel fastest
/// (h, then w, then channel).
template <class T>
struct Array3 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  Array3() = default;
  Array3(int h, int w, int c, T fill = T{})
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t index(int h, int w, int c) const {
    return (static_cast<std::size_t>(h) * width + w) * channels + c;
  }
  T& operator()(int h, int w, int c) { return data[index(h, w, c)]; }
  const T& operator()(int h, int w, int c) const { return data[index(h, w, c)]; }
  std::size_t size() const { return data.size(); }
  bool operator==(const Array3&) const = default;
};

using Image = Array3<float>;

/// Derives an independent 64-bit seed from a base seed and a list of
/// stream tags (split, identity, image index, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * tags.size());
  words.push_back(static_cast<std::uint32_t>(base));
  words.push_back(static_cast<std::uint32_t>(base >> 32));
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace reidkit
