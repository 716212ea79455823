/* Copyright 2026 The ServeSim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <string>
#include <vector>

#include "servesim/metrics/metrics.h"

namespace servesim::cli {

// Static SVG with empirical CDFs of TTFT, TPOT and ITL in milliseconds.
std::string render_cdf_svg(const std::vector<metrics::RequestRecord>& rows, const std::string& title);

}  // namespace servesim::cli
