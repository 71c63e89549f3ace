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

#include <string>
#include <vector>

#include "probekit/common.h"
#include "probekit/dataio.h"

namespace probekit {

// Half-open frame index range [begin, end).
struct FrameRange {
  int begin = 0;
  int end = 0;

  int size() const { return end - begin; }
  friend bool operator==(const FrameRange&, const FrameRange&) = default;
};

struct UnitEmbedding {
  std::string unit_id;
  Vector vector;
  int n_frames_pooled = 0;
};

// Maps [start_s, end_s) onto frames with floor(start/period) and
// ceil(end/period), clipped to the utterance. A span that clips to nothing
// but starts less than one period past the end falls back to the last frame.
FrameRange slice_frames(int n_frames, double frame_period_s, double start_s,
                        double end_s);
FrameRange slice_frames(const FrameEmbeddings& frames, double start_s,
                        double end_s);

// Mean of the frames inside the unit's span.
UnitEmbedding pool_unit(const FrameEmbeddings& frames, const AnnotationRow& unit);

}  // namespace probekit
