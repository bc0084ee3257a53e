// Copyright 2026 The QFlowNet Authors
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

// Report files for an EvalReport:
//
//   metrics.csv    per reference length: targets, successes, rate, attempts
//   confusion.csv  row-normalized reference x synthesized length matrix
//   diversity.csv  histogram of distinct successful sequences per target
//   targets.csv    one row per target
//   summary.txt    overall figures and conventions
//   *.svg          success, attempts, confusion heatmap, diversity plots
//
// All numbers are printed with fixed formats, so a fixed report renders to
// identical bytes.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "qflownet/errors.hpp"
#include "qflownet/evaluation.hpp"

namespace qflownet {

namespace detail {

inline std::string fmt_double(double v, const char* spec = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

struct SvgCanvas {
  static constexpr int kWidth = 480;
  static constexpr int kHeight = 320;
  static constexpr int kLeft = 60;
  static constexpr int kRight = 20;
  static constexpr int kTop = 30;
  static constexpr int kBottom = 50;
  std::ostringstream body;

  static double plot_w() { return kWidth - kLeft - kRight; }
  static double plot_h() { return kHeight - kTop - kBottom; }

  void text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 12) {
    body << "<text x=\"" << fmt_double(x, "%.2f") << "\" y=\"" << fmt_double(y, "%.2f")
         << "\" font-family=\"sans-serif\" font-size=\"" << size << "\" text-anchor=\"" << anchor << "\">" << s
         << "</text>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    body << "<rect x=\"" << fmt_double(x, "%.2f") << "\" y=\"" << fmt_double(y, "%.2f") << "\" width=\""
         << fmt_double(w, "%.2f") << "\" height=\"" << fmt_double(h, "%.2f") << "\" fill=\"" << fill << "\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2) {
    body << "<line x1=\"" << fmt_double(x1, "%.2f") << "\" y1=\"" << fmt_double(y1, "%.2f") << "\" x2=\""
         << fmt_double(x2, "%.2f") << "\" y2=\"" << fmt_double(y2, "%.2f") << "\" stroke=\"black\"/>\n";
  }
  void axes(const std::string& title, const std::string& xlabel, const std::string& ylabel) {
    line(kLeft, kTop + plot_h(), kLeft + plot_w(), kTop + plot_h());
    line(kLeft, kTop, kLeft, kTop + plot_h());
    text(kWidth / 2.0, 18, title, "middle", 14);
    text(kLeft + plot_w() / 2.0, kHeight - 10, xlabel);
    body << "<text x=\"14\" y=\"" << fmt_double(kTop + plot_h() / 2.0, "%.2f")
         << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
         << fmt_double(kTop + plot_h() / 2.0, "%.2f") << ")\">" << ylabel << "</text>\n";
  }
  std::string str() const {
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << body.str() << "</svg>\n";
    return os.str();
  }
};

/// Bar chart of (label, value) pairs on [0, y_max].
inline std::string bar_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                             const std::vector<std::pair<std::string, double>>& bars, double y_max) {
  SvgCanvas c;
  c.axes(title, xlabel, ylabel);
  if (!(y_max > 0.0)) y_max = 1.0;
  for (int k = 0; k <= 4; ++k) {
    const double v = y_max * k / 4.0;
    const double y = SvgCanvas::kTop + SvgCanvas::plot_h() * (1.0 - k / 4.0);
    c.text(SvgCanvas::kLeft - 6, y + 4, fmt_double(v, "%.3g"), "end", 10);
  }
  const double slot = bars.empty() ? 0.0 : SvgCanvas::plot_w() / static_cast<double>(bars.size());
  for (std::size_t k = 0; k < bars.size(); ++k) {
    const double h = SvgCanvas::plot_h() * std::clamp(bars[k].second / y_max, 0.0, 1.0);
    const double x = SvgCanvas::kLeft + slot * static_cast<double>(k);
    c.rect(x + slot * 0.15, SvgCanvas::kTop + SvgCanvas::plot_h() - h, slot * 0.7, h, "#e07b39");
    c.text(x + slot / 2.0, SvgCanvas::kTop + SvgCanvas::plot_h() + 16, bars[k].first, "middle", 10);
  }
  return c.str();
}

inline std::string heatmap(const std::string& title, const Eigen::MatrixXd& m) {
  SvgCanvas c;
  c.axes(title, "synthesized length", "reference length");
  const double cw = m.cols() ? SvgCanvas::plot_w() / static_cast<double>(m.cols()) : 0.0;
  const double rh = m.rows() ? SvgCanvas::plot_h() / static_cast<double>(m.rows()) : 0.0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index col = 0; col < m.cols(); ++col) {
      const double v = std::clamp(m(r, col), 0.0, 1.0);
      const int shade = static_cast<int>(255.0 - 200.0 * v);
      char fill[16];
      std::snprintf(fill, sizeof fill, "#%02x%02xff", shade, shade);
      // Reference length grows downward, as in a matrix display.
      const double x = SvgCanvas::kLeft + cw * static_cast<double>(col);
      const double y = SvgCanvas::kTop + rh * static_cast<double>(r);
      c.rect(x, y, cw, rh, fill);
      c.text(x + cw / 2.0, y + rh / 2.0 + 4, fmt_double(m(r, col), "%.2f"), "middle", 9);
    }
  }
  for (Eigen::Index col = 0; col < m.cols(); ++col) {
    c.text(SvgCanvas::kLeft + cw * (static_cast<double>(col) + 0.5), SvgCanvas::kTop + SvgCanvas::plot_h() + 16,
           std::to_string(col), "middle", 10);
  }
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    c.text(SvgCanvas::kLeft - 6, SvgCanvas::kTop + rh * (static_cast<double>(r) + 0.5) + 4, std::to_string(r), "end",
           10);
  }
  return c.str();
}

}  // namespace detail

/// Writes every report file into `out_dir` (created if missing).
inline void write_report(const EvalReport& er, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create report directory '" + out_dir + "'");
  using detail::fmt_double;

  const std::vector<LengthRow> rows = per_length_metrics(er);
  {
    std::ostringstream os;
    os << "reference_length,targets,successes,success_rate,mean_attempts_over_successes,failures\n";
    for (const auto& r : rows) {
      os << r.reference_length << ',' << r.targets << ',' << r.successes << ',' << fmt_double(r.success_rate) << ','
         << fmt_double(r.mean_attempts) << ',' << (r.targets - r.successes) << '\n';
    }
    detail::write_text(dir / "metrics.csv", os.str());
  }

  const LengthConfusion conf = length_confusion(er);
  {
    std::ostringstream os;
    os << "reference_length";
    for (Eigen::Index c = 0; c < conf.normalized.cols(); ++c) os << ",synth_" << c;
    os << '\n';
    for (const auto& r : rows) {
      os << r.reference_length;
      for (Eigen::Index c = 0; c < conf.normalized.cols(); ++c) {
        os << ',' << fmt_double(conf.normalized(r.reference_length, c));
      }
      os << '\n';
    }
    detail::write_text(dir / "confusion.csv", os.str());
  }

  const DiversityHistogram div = diversity_histogram(er);
  {
    std::ostringstream os;
    os << "distinct_min,distinct_max,targets\n";
    for (std::size_t b = 0; b < div.bins.size(); ++b) {
      os << div.bins[b].first << ',' << div.bins[b].second << ',' << div.counts[b] << '\n';
    }
    detail::write_text(dir / "diversity.csv", os.str());
  }

  {
    std::ostringstream os;
    os << "index,reference_length,generation_depth,provenance,success,attempts,shortest_length,distinct_solutions\n";
    for (std::size_t k = 0; k < er.records.size(); ++k) {
      const auto& r = er.records[k];
      os << k << ',' << r.reference_length << ',' << r.generation_depth << ',' << r.provenance << ','
         << (r.success ? 1 : 0) << ',' << r.attempts << ',' << r.shortest_length << ','
         << r.distinct_solutions.size() << '\n';
    }
    detail::write_text(dir / "targets.csv", os.str());
  }

  {
    std::size_t successes = 0;
    for (const auto& r : er.records) successes += r.success ? 1 : 0;
    std::ostringstream os;
    os << "targets: " << er.records.size() << '\n'
       << "successes: " << successes << '\n'
       << "overall_success_rate: " << fmt_double(er.overall_success_rate()) << '\n'
       << "mean_attempts_over_successes: " << fmt_double(er.mean_attempts()) << '\n'
       << "k_max: " << er.k_max << '\n'
       << "shorter_than_reference_fraction: " << fmt_double(conf.shorter_fraction()) << '\n'
       << "attempts: index of the first successful rollout (k_max+1 if none); means exclude failed targets\n"
       << "diversity: distinct successful action sequences per target\n"
       << "reference lengths: 'oracle' = BFS minimal length, 'generation-depth' = random-circuit depth\n";
    detail::write_text(dir / "summary.txt", os.str());
  }

  std::vector<std::pair<std::string, double>> success_bars, attempt_bars, div_bars;
  double max_attempts = 1.0;
  double max_div = 1.0;
  for (const auto& r : rows) {
    success_bars.push_back({std::to_string(r.reference_length), r.success_rate});
    attempt_bars.push_back({std::to_string(r.reference_length), r.mean_attempts});
    max_attempts = std::max(max_attempts, r.mean_attempts);
  }
  for (std::size_t b = 0; b < div.bins.size(); ++b) {
    const auto& [lo, hi] = div.bins[b];
    div_bars.push_back({lo == hi ? std::to_string(lo) : std::to_string(lo) + "-" + std::to_string(hi),
                        static_cast<double>(div.counts[b])});
    max_div = std::max(max_div, static_cast<double>(div.counts[b]));
  }
  detail::write_text(dir / "success_vs_length.svg",
                     detail::bar_chart("Success rate", "reference length", "success rate", success_bars, 1.0));
  detail::write_text(dir / "attempts_vs_length.svg",
                     detail::bar_chart("Mean attempts to first success", "reference length", "attempts",
                                       attempt_bars, max_attempts));
  detail::write_text(dir / "confusion.svg", detail::heatmap("Length confusion (row-normalized)", conf.normalized));
  detail::write_text(dir / "diversity.svg",
                     detail::bar_chart("Distinct correct circuits per target", "distinct circuits", "targets",
                                       div_bars, max_div));
}

}  // namespace qflownet
