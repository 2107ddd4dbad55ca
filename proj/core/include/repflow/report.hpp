#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "repflow/linalg.hpp"
#include "repflow/metrics.hpp"
#include "repflow/probing.hpp"

namespace repflow {

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite.
std::string format_double(double v);

/// layerwise_cosine.csv, inter_token.csv, cka.csv, scalars.csv, metrics.json.
void write_metric_report(const MetricReport& report, const std::filesystem::path& dir);
std::string metrics_json(const MetricReport& report);

/// Element-wise mean over reports of identical shape.
MetricReport mean_metric_report(const std::vector<MetricReport>& reports);

/// layer_sweep.csv (layer, mean_acc, std_acc) and probe.json.
void write_layer_sweep(const LayerSweepReport& report, const std::filesystem::path& dir);
std::string layer_sweep_json(const LayerSweepReport& report);

/// Minimal standalone SVG renderings.
std::string svg_heatmap(const Matrix& values, const std::string& title, double lo, double hi);
std::string svg_line_chart(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                           const std::string& title, const std::string& x_label, const std::string& y_label);

}  // namespace repflow
