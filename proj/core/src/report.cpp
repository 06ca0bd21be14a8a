// SPDX-License-Identifier: Apache-2.0

#include "gatelab/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace gatelab {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) {
    throw std::runtime_error("format_double: conversion failed");
  }
  return std::string(buf, end);
}

std::string to_csv(std::span<const ReportRow> rows) {
  std::string out = "method,metric,value\n";
  for (const ReportRow& row : rows) {
    out += row.method;
    out += ',';
    out += row.metric;
    out += ',';
    out += format_double(row.value);
    out += '\n';
  }
  return out;
}

std::string to_json(std::span<const ReportRow> rows) {
  nlohmann::ordered_json doc;
  doc["rows"] = nlohmann::ordered_json::array();
  for (const ReportRow& row : rows) {
    nlohmann::ordered_json entry;
    entry["method"] = row.method;
    entry["metric"] = row.metric;
    if (std::isfinite(row.value)) {
      entry["value"] = row.value;
    } else {
      entry["value"] = format_double(row.value);
    }
    doc["rows"].push_back(std::move(entry));
  }
  return doc.dump(2) + "\n";
}

namespace {

// Linear white -> saturated blue.
std::string cell_color(double intensity) {
  const double t = std::min(1.0, std::max(0.0, intensity));
  const auto channel = [t](double from, double to) {
    return static_cast<int>(std::lround(from + t * (to - from)));
  };
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", channel(255, 8),
                channel(255, 72), channel(255, 140));
  return buf;
}

std::string escape_xml(const std::string& text) {
  std::string out;
  for (char c : text) {
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

}  // namespace

std::string heatmap_svg(std::span<const std::vector<double>> rows,
                        std::span<const std::string> row_labels,
                        std::span<const std::string> column_labels) {
  if (rows.empty() || rows.front().empty()) {
    throw std::invalid_argument("heatmap_svg: grid must be non-empty");
  }
  const std::size_t columns = rows.front().size();
  for (const auto& row : rows) {
    if (row.size() != columns) {
      throw std::invalid_argument("heatmap_svg: ragged grid");
    }
  }
  if (!row_labels.empty() && row_labels.size() != rows.size()) {
    throw std::invalid_argument("heatmap_svg: row label count mismatch");
  }
  if (!column_labels.empty() && column_labels.size() != columns) {
    throw std::invalid_argument("heatmap_svg: column label count mismatch");
  }

  constexpr int kCell = 40;
  constexpr int kMarginLeft = 90;
  constexpr int kMarginTop = 30;
  const int width = kMarginLeft + kCell * static_cast<int>(columns) + 10;
  const int height = kMarginTop + kCell * static_cast<int>(rows.size()) + 10;

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(width) + "\" height=\"" +
                    std::to_string(height) + "\">\n";
  for (std::size_t c = 0; c < column_labels.size(); ++c) {
    svg += "  <text x=\"" +
           std::to_string(kMarginLeft + kCell * static_cast<int>(c) +
                          kCell / 2) +
           "\" y=\"20\" text-anchor=\"middle\" font-size=\"12\">" +
           escape_xml(column_labels[c]) + "</text>\n";
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!row_labels.empty()) {
      svg += "  <text x=\"" + std::to_string(kMarginLeft - 8) + "\" y=\"" +
             std::to_string(kMarginTop + kCell * static_cast<int>(r) +
                            kCell / 2 + 4) +
             "\" text-anchor=\"end\" font-size=\"12\">" +
             escape_xml(row_labels[r]) + "</text>\n";
    }
    double row_max = 0.0;
    for (double v : rows[r]) row_max = std::max(row_max, v);
    for (std::size_t c = 0; c < columns; ++c) {
      const double value = rows[r][c];
      const double intensity = row_max > 0.0 ? value / row_max : 0.0;
      svg += "  <rect x=\"" +
             std::to_string(kMarginLeft + kCell * static_cast<int>(c)) +
             "\" y=\"" +
             std::to_string(kMarginTop + kCell * static_cast<int>(r)) +
             "\" width=\"" + std::to_string(kCell) + "\" height=\"" +
             std::to_string(kCell) + "\" fill=\"" + cell_color(intensity) +
             "\" stroke=\"#808080\"><title>" + format_double(value) +
             "</title></rect>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace gatelab
