#pragma once

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <string>

#include "durl/eval.hpp"

namespace durl::svg {

/// Static box plot (whiskers at min/max) of one error quantity per
/// distance bin. `select` picks the quartiles from a bin, `scale`
/// converts to display units.
template <typename Select>
std::string distance_boxplot(const eval::EvalReport& report, const std::string& title,
                             const std::string& unit, Select select, double scale = 1.0) {
  constexpr double kWidth = 640, kHeight = 360, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
  double ymax = 0.0;
  for (const auto& b : report.bins)
    if (b.successes > 0) ymax = std::max(ymax, select(b).max * scale);
  if (!(ymax > 0.0)) ymax = 1.0;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  const auto y_of = [&](double v) { return kTop + plot_h * (1.0 - v * scale / ymax); };

  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2);
  ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  ss << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  ss << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
     << "</text>\n";
  ss << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h
     << "\" stroke=\"black\"/>\n";
  ss << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
     << kTop + plot_h << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymax * k / 4.0;
    const double y = kTop + plot_h * (1.0 - k / 4.0);
    ss << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
       << std::setprecision(3) << v << std::setprecision(2) << "</text>\n";
  }
  ss << "<text x=\"14\" y=\"" << kTop + plot_h / 2 << "\" transform=\"rotate(-90 14 " << kTop + plot_h / 2
     << ")\" text-anchor=\"middle\">" << unit << "</text>\n";

  const auto nbins = std::max<std::size_t>(report.bins.size(), 1);
  const double slot = plot_w / static_cast<double>(nbins);
  for (std::size_t i = 0; i < report.bins.size(); ++i) {
    const auto& b = report.bins[i];
    const double cx = kLeft + slot * (i + 0.5);
    ss << "<text x=\"" << cx << "\" y=\"" << kTop + plot_h + 16 << "\" text-anchor=\"middle\">" << b.lo
       << "-" << b.hi << " m</text>\n";
    ss << "<text x=\"" << cx << "\" y=\"" << kTop + plot_h + 30 << "\" text-anchor=\"middle\">n="
       << b.successes << "</text>\n";
    if (b.successes == 0) continue;
    const auto q = select(b);
    const double half = slot * 0.25;
    ss << "<line x1=\"" << cx << "\" y1=\"" << y_of(q.min) << "\" x2=\"" << cx << "\" y2=\"" << y_of(q.max)
       << "\" stroke=\"black\"/>\n";
    ss << "<rect x=\"" << cx - half << "\" y=\"" << y_of(q.q3) << "\" width=\"" << 2 * half
       << "\" height=\"" << std::max(y_of(q.q1) - y_of(q.q3), 0.5)
       << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    ss << "<line x1=\"" << cx - half << "\" y1=\"" << y_of(q.median) << "\" x2=\"" << cx + half
       << "\" y2=\"" << y_of(q.median) << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
  }
  ss << "</svg>\n";
  return ss.str();
}

}  // namespace durl::svg
