#pragma once

// Minimal SVG horizontal bar charts for polarity and lexicon plots.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace biasscope {

struct Bar {
  std::string label;
  double value = 0.0;
};

struct BarGroup {
  std::string title;
  std::vector<Bar> bars;
};

namespace detail {
inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o.push_back(c);
    }
  }
  return o;
}
}  // namespace detail

// Panels stacked vertically; each bar is drawn left or right of a shared zero
// axis, so signed scores read like a diverging chart.
inline void write_bar_chart_svg(std::ostream& out, const std::string& title, const std::vector<BarGroup>& groups) {
  const int width = 640, label_w = 160, bar_h = 18, gap = 6, panel_pad = 34;
  double max_abs = 1e-12;
  for (const auto& g : groups)
    for (const auto& b : g.bars) max_abs = std::max(max_abs, std::abs(b.value));
  int height = 40;
  for (const auto& g : groups) height += panel_pad + static_cast<int>(g.bars.size()) * (bar_h + gap);
  const double zero_x = label_w + (width - label_w - 20) / 2.0;
  const double half = (width - label_w - 20) / 2.0 - 40;

  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"10\" y=\"22\" font-size=\"15\" font-weight=\"bold\">" << detail::xml_escape(title) << "</text>\n";
  int y = 40;
  for (const auto& g : groups) {
    out << "<text x=\"10\" y=\"" << y + 18 << "\" font-weight=\"bold\">" << detail::xml_escape(g.title) << "</text>\n";
    y += panel_pad;
    const int top = y;
    for (const auto& b : g.bars) {
      const double w = half * std::abs(b.value) / max_abs;
      const double x = b.value >= 0 ? zero_x : zero_x - w;
      out << "<text x=\"" << label_w - 6 << "\" y=\"" << y + bar_h - 5 << "\" text-anchor=\"end\">"
          << detail::xml_escape(b.label) << "</text>\n";
      out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << bar_h << "\" fill=\""
          << (b.value >= 0 ? "#c0504d" : "#4f81bd") << "\"/>\n";
      const double tx = b.value >= 0 ? zero_x + w + 4 : zero_x - w - 4;
      out << "<text x=\"" << tx << "\" y=\"" << y + bar_h - 5 << "\" text-anchor=\"" << (b.value >= 0 ? "start" : "end")
          << "\">" << std::setprecision(3) << b.value << std::setprecision(2) << "</text>\n";
      y += bar_h + gap;
    }
    out << "<line x1=\"" << zero_x << "\" y1=\"" << top - 4 << "\" x2=\"" << zero_x << "\" y2=\"" << y
        << "\" stroke=\"black\"/>\n";
  }
  out << "</svg>\n";
  out.unsetf(std::ios::fixed);
}

}  // namespace biasscope
