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

#include "probekit/abx.h"

#include <algorithm>
#include <cmath>
#include <set>

namespace probekit {

void validate_triplet(const AbxTriplet& t,
                      const std::unordered_map<std::string, std::string>* meaning_of) {
  auto fail = [&](const std::string& why) {
    throw ValidationError("triplet " + t.triplet_id + ": " + why);
  };
  if (t.a_id.empty() || t.b_id.empty() || t.x_id.empty()) fail("empty unit id");
  if (t.a_id == t.b_id || t.a_id == t.x_id || t.b_id == t.x_id) {
    fail("A, B and X must be distinct units");
  }
  if (t.phonetic_key.empty()) fail("empty phonetic key");
  if (t.a_meaning_key == t.b_meaning_key) fail("A and B share a meaning key");
  if (meaning_of == nullptr) return;
  auto meaning = [&](const std::string& id) -> const std::string& {
    auto it = meaning_of->find(id);
    if (it == meaning_of->end()) fail("unknown unit '" + id + "'");
    return it->second;
  };
  if (meaning(t.a_id) != t.a_meaning_key) fail("A's meaning differs from a_meaning_key");
  if (meaning(t.b_id) != t.b_meaning_key) fail("B's meaning differs from b_meaning_key");
  if (meaning(t.x_id) != t.a_meaning_key) fail("X's meaning differs from A's");
}

std::vector<AbxTriplet> read_triplets(const fs::path& path) {
  const CsvDocument doc = read_csv(path);
  static const std::vector<std::string> kColumns = {
      "a_id", "b_id", "x_id", "phonetic_key", "a_meaning_key", "b_meaning_key"};
  std::vector<int> pos;
  for (const auto& col : kColumns) {
    auto it = std::find(doc.header.begin(), doc.header.end(), col);
    if (it == doc.header.end()) {
      throw ValidationError(path.string() + ": missing column '" + col + "'");
    }
    pos.push_back(static_cast<int>(it - doc.header.begin()));
  }
  auto id_it = std::find(doc.header.begin(), doc.header.end(), "triplet_id");
  const int id_pos =
      id_it == doc.header.end() ? -1 : static_cast<int>(id_it - doc.header.begin());

  std::vector<AbxTriplet> out;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto& f = doc.rows[r];
    AbxTriplet t;
    t.triplet_id = id_pos >= 0 ? f[id_pos] : "t" + std::to_string(doc.line_numbers[r]);
    t.a_id = f[pos[0]];
    t.b_id = f[pos[1]];
    t.x_id = f[pos[2]];
    t.phonetic_key = f[pos[3]];
    t.a_meaning_key = f[pos[4]];
    t.b_meaning_key = f[pos[5]];
    validate_triplet(t);
    if (!seen.insert(t.triplet_id).second) {
      throw ValidationError(path.string() + ": duplicate triplet_id '" + t.triplet_id + "'");
    }
    out.push_back(std::move(t));
  }
  return out;
}

void write_triplets(const std::vector<AbxTriplet>& triplets, const fs::path& path) {
  std::string out =
      "triplet_id,a_id,b_id,x_id,phonetic_key,a_meaning_key,b_meaning_key\n";
  for (const auto& t : triplets) {
    out += csv_escape(t.triplet_id) + "," + csv_escape(t.a_id) + "," +
           csv_escape(t.b_id) + "," + csv_escape(t.x_id) + "," +
           csv_escape(t.phonetic_key) + "," + csv_escape(t.a_meaning_key) + "," +
           csv_escape(t.b_meaning_key) + "\n";
  }
  write_text_atomic(path, out);
}

double cosine_similarity(const Vector& lhs, const Vector& rhs) {
  if (lhs.size() != rhs.size()) throw ValidationError("cosine: dimension mismatch");
  const double nl = lhs.norm();
  const double nr = rhs.norm();
  if (!(nl > 0.0) || !(nr > 0.0)) throw NumericError("cosine: zero-norm embedding");
  return lhs.dot(rhs) / (nl * nr);
}

int abx_outcome(const Vector& a, const Vector& b, const Vector& x) {
  return cosine_similarity(a, x) > cosine_similarity(a, b) ? 1 : 0;
}

std::vector<int> abx_outcomes(const std::vector<AbxTriplet>& triplets,
                              const EmbeddingLookup& embeddings) {
  auto lookup = [&](const AbxTriplet& t, const std::string& id) -> const Vector& {
    auto it = embeddings.find(id);
    if (it == embeddings.end()) {
      throw ValidationError("triplet " + t.triplet_id + ": no embedding for unit '" +
                            id + "'");
    }
    return it->second;
  };
  std::vector<int> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) {
    try {
      out.push_back(abx_outcome(lookup(t, t.a_id), lookup(t, t.b_id), lookup(t, t.x_id)));
    } catch (const NumericError& e) {
      throw NumericError("triplet " + t.triplet_id + ": " + e.what());
    }
  }
  return out;
}

std::vector<FoldScore> abx_accuracy(const std::vector<AbxTriplet>& triplets,
                                    const EmbeddingLookup& embeddings,
                                    std::uint64_t seed, int n_folds,
                                    double subsample_fraction) {
  if (triplets.empty()) throw ConfigError("abx: no triplets");
  if (n_folds < 1) throw ConfigError("abx: need at least one fold");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw ConfigError("abx: subsample_fraction must lie in (0, 1]");
  }
  const std::vector<int> outcomes = abx_outcomes(triplets, embeddings);
  const int n = static_cast<int>(triplets.size());
  const int take = std::max(1, static_cast<int>(std::floor(subsample_fraction * n)));
  std::vector<FoldScore> out;
  for (int fold = 0; fold < n_folds; ++fold) {
    const auto chosen = subsample_indices(n, take, derive_seed(seed, fold));
    long hits = 0;
    for (int i : chosen) hits += outcomes[i];
    out.push_back({fold, static_cast<double>(hits) / static_cast<double>(chosen.size())});
  }
  return out;
}

}  // namespace probekit
