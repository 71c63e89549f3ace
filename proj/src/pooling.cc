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

#include "probekit/pooling.h"

#include <algorithm>
#include <cmath>

namespace probekit {

namespace {

// Alignment times are decimal seconds, so 0.10 / 0.02 lands on
// 5.000000000000001. Snap quotients that sit within rounding noise of an
// integer before applying floor/ceil.
double frame_quotient(double seconds, double period) {
  const double q = seconds / period;
  const double nearest = std::round(q);
  if (std::abs(q - nearest) <= 1e-9 * std::max(1.0, std::abs(q))) return nearest;
  return q;
}

}  // namespace

FrameRange slice_frames(int n_frames, double frame_period_s, double start_s,
                        double end_s) {
  if (n_frames < 1) throw ValidationError("utterance has no frames");
  if (!(frame_period_s > 0.0)) throw ValidationError("frame period must be positive");
  if (!std::isfinite(start_s) || !std::isfinite(end_s) || start_s < 0.0 ||
      !(start_s < end_s)) {
    throw ValidationError("span must satisfy 0 <= start < end");
  }
  const double duration = n_frames * frame_period_s;
  if (start_s >= duration + frame_period_s) {
    throw OutOfRangeError("span starts at " + format_double(start_s) +
                          " s, beyond utterance end " + format_double(duration) +
                          " s");
  }

  const double lo = std::floor(frame_quotient(start_s, frame_period_s));
  const double hi = std::ceil(frame_quotient(end_s, frame_period_s));
  int begin = static_cast<int>(std::clamp(lo, 0.0, static_cast<double>(n_frames)));
  int end = static_cast<int>(std::clamp(hi, 0.0, static_cast<double>(n_frames)));
  if (begin >= end) {
    const int nearest = std::clamp(begin, 0, n_frames - 1);
    return {nearest, nearest + 1};
  }
  return {begin, end};
}

FrameRange slice_frames(const FrameEmbeddings& frames, double start_s,
                        double end_s) {
  return slice_frames(frames.n_frames(), frames.frame_period_s, start_s, end_s);
}

UnitEmbedding pool_unit(const FrameEmbeddings& frames, const AnnotationRow& unit) {
  if (!frames.utterance_id.empty() && unit.utterance_id != frames.utterance_id) {
    throw ValidationError("unit " + unit.unit_id + " belongs to utterance " +
                          unit.utterance_id + ", not " + frames.utterance_id);
  }
  FrameRange range;
  try {
    range = slice_frames(frames, unit.start_s, unit.end_s);
  } catch (const OutOfRangeError& e) {
    throw OutOfRangeError("unit " + unit.unit_id + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("unit " + unit.unit_id + ": " + e.what());
  }
  UnitEmbedding out;
  out.unit_id = unit.unit_id;
  out.n_frames_pooled = range.size();
  out.vector = frames.frames.middleRows(range.begin, range.size())
                   .cast<double>()
                   .colwise()
                   .mean()
                   .transpose();
  return out;
}

}  // namespace probekit
