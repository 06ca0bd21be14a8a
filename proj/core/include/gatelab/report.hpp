// SPDX-License-Identifier: Apache-2.0
//
// Deterministic result serialization: (method, metric, value) tables as CSV
// and JSON, and SVG heatmaps whose cells carry their exact values in title
// attributes. Identical inputs produce byte-identical output.
#pragma once

#include <span>
#include <string>
#include <vector>

namespace gatelab {

// Shortest decimal string that round-trips the double (to_chars); non-finite
// values print as "inf", "-inf", "nan".
std::string format_double(double value);

struct ReportRow {
  std::string method;
  std::string metric;
  double value = 0.0;
};

// "method,metric,value" header plus one row per entry, LF line endings.
std::string to_csv(std::span<const ReportRow> rows);

// {"rows": [{"method": ..., "metric": ..., "value": ...}, ...]} with
// non-finite values as strings.
std::string to_json(std::span<const ReportRow> rows);

// Row-major heatmap (rows x columns of cells), each row normalized by its
// largest value and colored on a linear white-to-saturated scale; every cell
// embeds its exact value in a <title> element. row_labels/column_labels may
// be empty or must match the grid.
std::string heatmap_svg(std::span<const std::vector<double>> rows,
                        std::span<const std::string> row_labels,
                        std::span<const std::string> column_labels);

}  // namespace gatelab
