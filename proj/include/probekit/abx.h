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

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "probekit/common.h"
#include "probekit/dataio.h"

namespace probekit {

// A, B and X share a pronunciation; only A and X share a meaning.
struct AbxTriplet {
  std::string triplet_id;
  std::string a_id;
  std::string b_id;
  std::string x_id;
  std::string phonetic_key;
  std::string a_meaning_key;
  std::string b_meaning_key;
};

// Structural checks on one triplet; throws ValidationError naming the
// triplet. When `meaning_of` is non-null it maps unit ids to their meaning
// (orthographic form) and the A/X/B meanings are checked against it.
void validate_triplet(const AbxTriplet& triplet,
                      const std::unordered_map<std::string, std::string>* meaning_of = nullptr);

// CSV: a_id,b_id,x_id,phonetic_key,a_meaning_key,b_meaning_key[,triplet_id].
// Triplets without an id column are named "t<line>".
std::vector<AbxTriplet> read_triplets(const fs::path& path);
void write_triplets(const std::vector<AbxTriplet>& triplets, const fs::path& path);

double cosine_similarity(const Vector& lhs, const Vector& rhs);

// 1 if sim(A, X) > sim(A, B), else 0. Ties score 0.
int abx_outcome(const Vector& a, const Vector& b, const Vector& x);

using EmbeddingLookup = std::unordered_map<std::string, Vector>;

std::vector<int> abx_outcomes(const std::vector<AbxTriplet>& triplets,
                              const EmbeddingLookup& embeddings);

// Per fold: mean outcome over a seeded subsample of the triplets.
std::vector<FoldScore> abx_accuracy(const std::vector<AbxTriplet>& triplets,
                                    const EmbeddingLookup& embeddings,
                                    std::uint64_t seed, int n_folds = 5,
                                    double subsample_fraction = 0.8);

}  // namespace probekit
