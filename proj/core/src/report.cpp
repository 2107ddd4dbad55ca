#include "repflow/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "io_util.hpp"
#include "json.hpp"
#include "repflow/error.hpp"

namespace repflow {
using nlohmann::ordered_json;

namespace {

ordered_json number(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

ordered_json to_json(const Vector& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

ordered_json to_json(const Matrix& m) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) to_json(Vector(m.row(i).transpose())).swap(a.emplace_back());
  return a;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (const char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string metrics_json(const MetricReport& r) {
  ordered_json j;
  j["layerwise_cosine"] = to_json(r.layerwise_cosine);
  j["inter_token"] = to_json(r.inter_token);
  j["cka"] = to_json(r.cka);
  j["smoothness"] = number(r.smoothness);
  j["stability"] = number(r.stability);
  return j.dump(2) + "\n";
}

void write_metric_report(const MetricReport& r, const std::filesystem::path& dir) {
  detail::ensure_dir(dir);
  std::ostringstream cos;
  cos << "layer,token,cosine\n";
  for (Eigen::Index l = 0; l < r.layerwise_cosine.rows(); ++l)
    for (Eigen::Index t = 0; t < r.layerwise_cosine.cols(); ++t)
      cos << l << ',' << t << ',' << format_double(r.layerwise_cosine(l, t)) << '\n';
  detail::write_file(dir / "layerwise_cosine.csv", cos.str());

  std::ostringstream inter;
  inter << "layer,inter_token_similarity\n";
  for (Eigen::Index l = 0; l < r.inter_token.size(); ++l) inter << l << ',' << format_double(r.inter_token(l)) << '\n';
  detail::write_file(dir / "inter_token.csv", inter.str());

  std::ostringstream cka;
  cka << "layer_i,layer_j,cka\n";
  for (Eigen::Index i = 0; i < r.cka.rows(); ++i)
    for (Eigen::Index j = 0; j < r.cka.cols(); ++j) cka << i << ',' << j << ',' << format_double(r.cka(i, j)) << '\n';
  detail::write_file(dir / "cka.csv", cka.str());

  std::ostringstream scalars;
  scalars << "metric,value\n";
  scalars << "smoothness," << format_double(r.smoothness) << '\n';
  scalars << "stability," << format_double(r.stability) << '\n';
  detail::write_file(dir / "scalars.csv", scalars.str());

  detail::write_file(dir / "metrics.json", metrics_json(r));
}

MetricReport mean_metric_report(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw Error("mean_metric_report: no reports");
  MetricReport mean = reports.front();
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const MetricReport& r = reports[i];
    if (r.cka.rows() != mean.cka.rows() || r.layerwise_cosine.cols() != mean.layerwise_cosine.cols())
      throw Error("mean_metric_report: samples differ in shape");
    mean.layerwise_cosine += r.layerwise_cosine;
    mean.inter_token += r.inter_token;
    mean.cka += r.cka;
    mean.smoothness += r.smoothness;
    mean.stability += r.stability;
  }
  const auto k = static_cast<double>(reports.size());
  mean.layerwise_cosine /= k;
  mean.inter_token /= k;
  mean.cka /= k;
  mean.smoothness /= k;
  mean.stability /= k;
  return mean;
}

std::string layer_sweep_json(const LayerSweepReport& r) {
  ordered_json j;
  j["per_layer_accuracy"] = to_json(r.per_layer_accuracy);
  j["per_layer_std"] = to_json(r.per_layer_std);
  j["peak_layer"] = r.peak_layer;
  j["last_layer_accuracy"] = number(r.last_layer_accuracy);
  j["delta_peak_minus_last"] = number(r.delta_peak_minus_last);
  j["classes"] = r.classes;
  j["samples"] = r.samples;
  j["train_size"] = r.train_size;
  j["train_fraction"] = r.train_fraction;
  j["seeds"] = r.seeds;
  return j.dump(2) + "\n";
}

void write_layer_sweep(const LayerSweepReport& r, const std::filesystem::path& dir) {
  detail::ensure_dir(dir);
  std::ostringstream csv;
  csv << "layer,mean_acc,std_acc\n";
  for (Eigen::Index l = 0; l < r.per_layer_accuracy.size(); ++l)
    csv << l << ',' << format_double(r.per_layer_accuracy(l)) << ',' << format_double(r.per_layer_std(l)) << '\n';
  detail::write_file(dir / "layer_sweep.csv", csv.str());
  detail::write_file(dir / "probe.json", layer_sweep_json(r));
}

std::string svg_heatmap(const Matrix& values, const std::string& title, double lo, double hi) {
  const int cell = std::max(4, 320 / static_cast<int>(std::max<Eigen::Index>(1, std::max(values.rows(), values.cols()))));
  const int margin = 30;
  const auto w = static_cast<int>(values.cols()) * cell + 2 * margin;
  const auto h = static_cast<int>(values.rows()) * cell + 2 * margin;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<text x=\"" << margin << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"12\">" << escape_xml(title)
    << "</text>\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      const double v = values(i, j);
      const double u = std::isfinite(v) ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
      const int r = static_cast<int>(std::lround(255.0 * u));
      const int b = 255 - r;
      s << "<rect x=\"" << margin + j * cell << "\" y=\"" << margin + i * cell << "\" width=\"" << cell
        << "\" height=\"" << cell << "\" fill=\"rgb(" << r << ",64," << b << ")\"><title>" << i << "," << j << ": "
        << format_double(v) << "</title></rect>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

std::string svg_line_chart(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                           const std::string& title, const std::string& x_label, const std::string& y_label) {
  const double width = 480, height = 300, left = 50, right = 120, top = 30, bottom = 40;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t points = 0;
  for (const auto& [name, ys] : series) {
    points = std::max(points, ys.size());
    for (const double y : ys)
      if (std::isfinite(y)) lo = std::min(lo, y), hi = std::max(hi, y);
  }
  if (!(lo <= hi)) lo = 0.0, hi = 1.0;
  if (hi == lo) hi = lo + 1.0;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](std::size_t i) { return left + (points > 1 ? pw * static_cast<double>(i) / (points - 1) : pw / 2); };
  auto py = [&](double y) { return top + ph * (1.0 - (y - lo) / (hi - lo)); };
  static constexpr const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  s << "<text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"12\">" << escape_xml(title)
    << "</text>\n";
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#888\"/>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 8 << "\" font-family=\"sans-serif\" font-size=\"11\">"
    << escape_xml(x_label) << "</text>\n";
  s << "<text x=\"4\" y=\"" << top - 6 << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape_xml(y_label)
    << " [" << format_double(lo) << ", " << format_double(hi) << "]</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& [name, ys] = series[k];
    const char* color = colors[k % std::size(colors)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i)
      if (std::isfinite(ys[i])) s << px(i) << ',' << py(ys[i]) << ' ';
    s << "\"/>\n";
    s << "<text x=\"" << left + pw + 8 << "\" y=\"" << top + 14 * (k + 1) << "\" fill=\"" << color
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape_xml(name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace repflow
