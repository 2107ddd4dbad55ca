#include "repflow/probing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "repflow/error.hpp"
#include "repflow/parallel.hpp"
#include "repflow/random.hpp"

namespace repflow {

namespace {

int infer_classes(const std::vector<int>& labels) {
  int mx = -1;
  for (const int y : labels) mx = std::max(mx, y);
  return mx + 1;
}

void check_labels(const std::vector<int>& labels, int classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw Error("label out of range at sample " + std::to_string(i) + ": " + std::to_string(labels[i]));
  }
}

// Row-wise softmax in place; returns the mean negative log-likelihood.
double softmax_rows(Matrix& logits, const std::vector<int>& labels) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp().matrix();
    const double z = logits.row(i).sum();
    logits.row(i) /= z;
    loss -= std::log(logits(i, labels[static_cast<std::size_t>(i)]));
  }
  return loss / static_cast<double>(logits.rows());
}

std::vector<std::size_t> split_permutation(std::size_t m, std::uint64_t seed) {
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  CounterRng rng(seed, stream_id("probe.split"));
  for (std::size_t i = m; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

}  // namespace

void ProbeConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("probe: learning rate must be positive");
  if (epochs < 1) throw Error("probe: epochs must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error("probe: train fraction must lie in (0, 1)");
}

Matrix ProbeModel::logits(const Matrix& features) const {
  if (features.cols() != dims())
    throw Error("probe: feature dimension " + std::to_string(features.cols()) + " != model dimension " +
                std::to_string(dims()));
  Matrix out = features * weights.transpose();
  out.rowwise() += bias.transpose();
  return out;
}

std::vector<int> ProbeModel::predict(const Matrix& features) const {
  const Matrix z = logits(features);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < z.cols(); ++c)
      if (z(i, c) > z(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

ProbeModel train_probe(const Matrix& features, const std::vector<int>& labels, const ProbeConfig& config,
                       int classes, std::vector<double>* loss_history) {
  config.validate();
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw Error("probe: feature rows and label count differ");
  if (!features.allFinite()) throw Error("probe: non-finite feature");
  if (classes == 0) classes = infer_classes(labels);
  check_labels(labels, classes);
  const std::set<int> present(labels.begin(), labels.end());
  if (classes < 2 || present.size() < 2 || labels.size() < static_cast<std::size_t>(classes))
    throw Error("degenerate training set: " + std::to_string(labels.size()) + " samples, " +
                std::to_string(present.size()) + " distinct labels, " + std::to_string(classes) + " classes");

  const Eigen::Index m = features.rows();
  const Eigen::Index d = features.cols();
  ProbeModel model{Matrix::Zero(classes, d), Vector::Zero(classes)};
  Matrix m_w = Matrix::Zero(classes, d), v_w = Matrix::Zero(classes, d);
  Vector m_b = Vector::Zero(classes), v_b = Vector::Zero(classes);
  Matrix onehot = Matrix::Zero(m, classes);
  for (Eigen::Index i = 0; i < m; ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  if (loss_history) loss_history->clear();

  double b1t = 1.0, b2t = 1.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Matrix p = model.logits(features);
    const double loss = softmax_rows(p, labels);
    if (loss_history) loss_history->push_back(loss);
    p -= onehot;
    p /= static_cast<double>(m);
    const Matrix g_w = p.transpose() * features;
    const Vector g_b = p.colwise().sum().transpose();

    b1t *= config.beta1;
    b2t *= config.beta2;
    m_w = config.beta1 * m_w + (1.0 - config.beta1) * g_w;
    v_w = config.beta2 * v_w + (1.0 - config.beta2) * g_w.cwiseAbs2();
    m_b = config.beta1 * m_b + (1.0 - config.beta1) * g_b;
    v_b = config.beta2 * v_b + (1.0 - config.beta2) * g_b.cwiseAbs2();
    const double c1 = 1.0 - b1t;
    const double c2 = 1.0 - b2t;
    model.weights.array() -=
        config.learning_rate * (m_w.array() / c1) / ((v_w.array() / c2).sqrt() + config.epsilon);
    model.bias.array() -= config.learning_rate * (m_b.array() / c1) / ((v_b.array() / c2).sqrt() + config.epsilon);
  }
  if (!model.weights.allFinite() || !model.bias.allFinite()) throw Error("probe: training diverged");
  return model;
}

double cross_entropy(const ProbeModel& model, const Matrix& features, const std::vector<int>& labels) {
  if (labels.empty()) throw Error("probe: empty evaluation set");
  check_labels(labels, static_cast<int>(model.classes()));
  Matrix p = model.logits(features);
  return softmax_rows(p, labels);
}

double evaluate_probe(const ProbeModel& model, const Matrix& features, const std::vector<int>& labels) {
  if (labels.empty() || features.rows() == 0) throw Error("probe: empty evaluation set");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw Error("probe: feature rows and label count differ");
  const std::vector<int> pred = model.predict(features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += (pred[i] == labels[i]) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

Matrix final_token_features(const std::vector<std::pair<ActivationStack, int>>& dataset, std::size_t layer) {
  if (dataset.empty()) throw Error("probe: empty dataset");
  const std::size_t d = dataset.front().first.dims();
  Matrix x(static_cast<Eigen::Index>(dataset.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const ActivationStack& s = dataset[i].first;
    x.row(static_cast<Eigen::Index>(i)) = s.token(layer, s.tokens() - 1).transpose();
  }
  return x;
}

LayerSweepReport layer_sweep(const std::vector<std::pair<ActivationStack, int>>& dataset, const ProbeConfig& config,
                             const std::vector<std::uint64_t>& seeds) {
  config.validate();
  if (dataset.size() < 2) throw Error("layer_sweep: need at least two samples");
  if (seeds.empty()) throw Error("layer_sweep: need at least one seed");
  const std::size_t layers = dataset.front().first.layers();
  const std::size_t dims = dataset.front().first.dims();
  std::vector<int> labels;
  labels.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const ActivationStack& s = dataset[i].first;
    if (s.layers() != layers || s.dims() != dims)
      throw Error("layer_sweep: inconsistent shapes at sample " + std::to_string(i));
    labels.push_back(dataset[i].second);
  }
  const int classes = infer_classes(labels);
  check_labels(labels, classes);

  const std::size_t m = dataset.size();
  const auto train_size = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(m))), 1, m - 1);

  struct Split {
    std::vector<std::size_t> train, val;
  };
  std::vector<Split> splits;
  for (const std::uint64_t seed : seeds) {
    const auto perm = split_permutation(m, seed);
    splits.push_back({{perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(train_size)},
                      {perm.begin() + static_cast<std::ptrdiff_t>(train_size), perm.end()}});
  }

  std::vector<Matrix> features(layers);
  for (std::size_t l = 0; l < layers; ++l) features[l] = final_token_features(dataset, l);

  auto gather = [&](const Matrix& x, const std::vector<std::size_t>& idx, Matrix& xs, std::vector<int>& ys) {
    xs.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
    ys.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      xs.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
      ys[i] = labels[idx[i]];
    }
  };

  std::vector<double> acc(layers * seeds.size());
  parallel_for(acc.size(), [&](std::size_t job) {
    const std::size_t l = job / seeds.size();
    const Split& split = splits[job % seeds.size()];
    Matrix xt, xv;
    std::vector<int> yt, yv;
    gather(features[l], split.train, xt, yt);
    gather(features[l], split.val, xv, yv);
    const ProbeModel model = train_probe(xt, yt, config, classes);
    acc[job] = evaluate_probe(model, xv, yv);
  });

  LayerSweepReport report;
  report.per_layer_accuracy = Vector::Zero(static_cast<Eigen::Index>(layers));
  report.per_layer_std = Vector::Zero(static_cast<Eigen::Index>(layers));
  const auto s = static_cast<double>(seeds.size());
  for (std::size_t l = 0; l < layers; ++l) {
    double mean = 0.0;
    for (std::size_t k = 0; k < seeds.size(); ++k) mean += acc[l * seeds.size() + k];
    mean /= s;
    double ss = 0.0;
    for (std::size_t k = 0; k < seeds.size(); ++k) ss += (acc[l * seeds.size() + k] - mean) * (acc[l * seeds.size() + k] - mean);
    report.per_layer_accuracy(static_cast<Eigen::Index>(l)) = mean;
    report.per_layer_std(static_cast<Eigen::Index>(l)) = seeds.size() > 1 ? std::sqrt(ss / (s - 1.0)) : 0.0;
  }
  Eigen::Index peak = 0;
  for (Eigen::Index l = 1; l < report.per_layer_accuracy.size(); ++l)
    if (report.per_layer_accuracy(l) > report.per_layer_accuracy(peak)) peak = l;
  report.peak_layer = static_cast<std::size_t>(peak);
  report.last_layer_accuracy = report.per_layer_accuracy(report.per_layer_accuracy.size() - 1);
  report.delta_peak_minus_last = report.per_layer_accuracy(peak) - report.last_layer_accuracy;
  report.classes = classes;
  report.samples = m;
  report.train_size = train_size;
  report.train_fraction = config.train_fraction;
  report.seeds = seeds;
  return report;
}

std::vector<std::pair<ActivationStack, int>> synthetic_probe_dataset(const SyntheticProbeSpec& spec) {
  if (spec.classes < 2 || spec.dims < static_cast<std::size_t>(spec.classes))
    throw Error("synthetic probe dataset: need 2 <= classes <= dims");
  if (spec.informative_layer >= spec.layers) throw Error("synthetic probe dataset: informative layer out of range");
  std::vector<std::pair<ActivationStack, int>> out;
  out.reserve(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
    CounterRng rng(spec.seed, stream_id("probe.synthetic", i));
    std::vector<double> data(spec.layers * spec.tokens * spec.dims);
    for (double& v : data) v = spec.noise * rng.normal();
    const std::size_t base = (spec.informative_layer * spec.tokens + spec.tokens - 1) * spec.dims;
    for (std::size_t k = 0; k < spec.dims; ++k) data[base + k] = (k == static_cast<std::size_t>(label)) ? 1.0 : 0.0;
    StackMeta meta{"synthetic-probe", "sample-" + std::to_string(i), "probe"};
    out.emplace_back(ActivationStack(spec.layers, spec.tokens, spec.dims, std::move(data), std::move(meta)), label);
  }
  return out;
}

}  // namespace repflow
