// Copyright 2026 The probekit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "probekit/common.h"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <random>

namespace probekit {

namespace {
constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;
}  // namespace

SeedHasher::SeedHasher(std::uint64_t seed) : state_(kFnvOffset) {
  add(static_cast<std::int64_t>(seed));
}

SeedHasher& SeedHasher::add(std::string_view bytes) {
  for (unsigned char ch : bytes) {
    state_ ^= ch;
    state_ *= kFnvPrime;
  }
  // Field separator so ("ab","c") and ("a","bc") hash differently.
  state_ ^= 0xffu;
  state_ *= kFnvPrime;
  return *this;
}

SeedHasher& SeedHasher::add(std::int64_t value) {
  auto bits = static_cast<std::uint64_t>(value);
  for (int i = 0; i < 8; ++i) {
    state_ ^= (bits >> (8 * i)) & 0xffu;
    state_ *= kFnvPrime;
  }
  return *this;
}

std::uint64_t derive_seed(std::uint64_t seed, std::int64_t stream) {
  return SeedHasher(seed).add(stream).value();
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("cannot format double");
  return std::string(buf, end);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\r')) --last;
  if (first < last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last) {
    throw ValidationError("not a number: '" + std::string(text) + "'");
  }
  return value;
}

std::int64_t parse_int(std::string_view text) {
  std::int64_t value = 0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\r')) --last;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last) {
    throw ValidationError("not an integer: '" + std::string(text) + "'");
  }
  return value;
}

std::vector<int> subsample_indices(int n, int count, std::uint64_t seed) {
  if (count < 0 || count > n) {
    throw ConfigError("cannot draw " + std::to_string(count) + " of " +
                      std::to_string(n) + " items");
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace probekit
