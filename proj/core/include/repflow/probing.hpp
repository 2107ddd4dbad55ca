#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "repflow/activation_store.hpp"
#include "repflow/linalg.hpp"

namespace repflow {

/// Full-batch Adam on softmax cross-entropy, zero initialization.
struct ProbeConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 150;
  std::uint64_t seed = 0;  // drives the train/validation split in layer_sweep
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double train_fraction = 0.8;

  void validate() const;
};

struct ProbeModel {
  Matrix weights;  // [C x d]
  Vector bias;     // [C]

  Eigen::Index classes() const noexcept { return weights.rows(); }
  Eigen::Index dims() const noexcept { return weights.cols(); }
  Matrix logits(const Matrix& features) const;
  /// Argmax of each row of logits; ties go to the lowest class index.
  std::vector<int> predict(const Matrix& features) const;
};

/// `classes` = 0 infers C = max(label) + 1. Needs M >= C and at least two
/// distinct labels, otherwise throws "degenerate training set".
/// When `loss_history` is given it receives the loss before every step.
ProbeModel train_probe(const Matrix& features, const std::vector<int>& labels, const ProbeConfig& config,
                       int classes = 0, std::vector<double>* loss_history = nullptr);

double cross_entropy(const ProbeModel& model, const Matrix& features, const std::vector<int>& labels);
double evaluate_probe(const ProbeModel& model, const Matrix& features, const std::vector<int>& labels);

struct LayerSweepReport {
  Vector per_layer_accuracy;  // mean over seeds of validation accuracy, [layers]
  Vector per_layer_std;       // sample std over seeds (0 for a single seed)
  std::size_t peak_layer = 0;
  double last_layer_accuracy = 0.0;
  double delta_peak_minus_last = 0.0;
  int classes = 0;
  std::size_t samples = 0;
  std::size_t train_size = 0;
  double train_fraction = 0.0;
  std::vector<std::uint64_t> seeds;
};

/// Final-token features of every sample at one snapshot, [M x d].
Matrix final_token_features(const std::vector<std::pair<ActivationStack, int>>& dataset, std::size_t layer);

/// Trains one probe per (layer, seed) on final-token features and reports
/// held-out accuracy. config.seed is ignored; each seed selects a split.
LayerSweepReport layer_sweep(const std::vector<std::pair<ActivationStack, int>>& dataset, const ProbeConfig& config,
                             const std::vector<std::uint64_t>& seeds);

/// Labelled stacks where the final token of `informative_layer` is the
/// one-hot label (first `classes` dims) and everything else is N(0, noise^2).
struct SyntheticProbeSpec {
  std::size_t layers = 5;
  std::size_t informative_layer = 2;
  std::size_t samples = 200;
  int classes = 4;
  std::size_t tokens = 4;
  std::size_t dims = 8;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

std::vector<std::pair<ActivationStack, int>> synthetic_probe_dataset(const SyntheticProbeSpec& spec);

}  // namespace repflow
