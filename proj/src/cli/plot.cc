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

#include "servesim/cli/plot.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace servesim::cli {
namespace {

constexpr double kPanelW = 320;
constexpr double kPanelH = 240;
constexpr double kMargin = 48;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string panel(const std::string& name, std::vector<double> ms, double x0) {
  std::string svg = fmt::format(R"svg(<g transform="translate({},{})">)svg", x0, kMargin);
  svg += fmt::format(R"svg(<rect width="{}" height="{}" fill="none" stroke="#444"/>)svg", kPanelW, kPanelH);
  svg += fmt::format(R"svg(<text x="{}" y="-10" text-anchor="middle" font-size="13">{} (ms), n={}</text>)svg",
                     kPanelW / 2, escape(name), ms.size());
  if (!ms.empty()) {
    std::sort(ms.begin(), ms.end());
    const double hi = std::max(ms.back(), 1e-9);
    std::string path = fmt::format("M0,{:.2f}", kPanelH);
    for (std::size_t i = 0; i < ms.size(); ++i) {
      const double x = ms[i] / hi * kPanelW;
      const double y_before = kPanelH * (1.0 - static_cast<double>(i) / static_cast<double>(ms.size()));
      const double y_after = kPanelH * (1.0 - static_cast<double>(i + 1) / static_cast<double>(ms.size()));
      path += fmt::format(" L{:.2f},{:.2f} L{:.2f},{:.2f}", x, y_before, x, y_after);
    }
    svg += fmt::format(R"svg(<path d="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>)svg", path);
    svg += fmt::format(R"svg(<text x="0" y="{}" font-size="11">0</text>)svg", kPanelH + 14);
    svg += fmt::format(R"svg(<text x="{}" y="{}" text-anchor="end" font-size="11">{:.3g}</text>)svg", kPanelW,
                       kPanelH + 14, hi);
  }
  svg += fmt::format(R"svg(<text x="-6" y="4" text-anchor="end" font-size="11">1</text>)svg");
  svg += fmt::format(R"svg(<text x="-6" y="{}" text-anchor="end" font-size="11">0</text>)svg", kPanelH);
  svg += "</g>";
  return svg;
}

}  // namespace

std::string render_cdf_svg(const std::vector<metrics::RequestRecord>& rows, const std::string& title) {
  std::vector<double> ttft, tpot, itl;
  for (const auto& r : rows) {
    const auto m = metrics::request_metrics(r);
    if (r.token_times.empty()) continue;
    ttft.push_back(static_cast<double>(m.ttft_us) / 1e3);
    if (m.tpot_us) tpot.push_back(*m.tpot_us / 1e3);
    for (Micros gap : m.itl_us) itl.push_back(static_cast<double>(gap) / 1e3);
  }
  const double width = 3 * kPanelW + 4 * kMargin;
  const double height = kPanelH + 2 * kMargin;
  std::string svg = fmt::format(
      R"svg(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif">)svg", width,
      height);
  svg += fmt::format(R"svg(<rect width="100%" height="100%" fill="white"/>)svg");
  svg += fmt::format(R"svg(<text x="{}" y="18" text-anchor="middle" font-size="15">{}</text>)svg", width / 2,
                     escape(title));
  svg += panel("TTFT", std::move(ttft), kMargin);
  svg += panel("TPOT", std::move(tpot), 2 * kMargin + kPanelW);
  svg += panel("ITL", std::move(itl), 3 * kMargin + 2 * kPanelW);
  svg += "</svg>\n";
  return svg;
}

}  // namespace servesim::cli
