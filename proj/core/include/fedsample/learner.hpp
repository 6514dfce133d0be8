#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsample/ou.hpp"

namespace fedsample {

struct LayerShape {
  std::string name;
  std::vector<std::size_t> dims;

  std::size_t size() const noexcept;
  bool operator==(const LayerShape&) const = default;
};

/// Flat parameter vector plus the layer layout it was built from.
struct ParamVector {
  std::vector<double> data;
  std::vector<LayerShape> shape;

  std::size_t size() const noexcept { return data.size(); }
  /// Throws invalid-argument when the layout does not cover data exactly.
  void check_shape() const;
  bool all_finite() const noexcept;
  bool operator==(const ParamVector&) const = default;
};

/// ‖lhs − rhs‖₂; sizes must agree.
double l2_distance(const ParamVector& lhs, const ParamVector& rhs);

/// Row-major dense matrix of features.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  bool operator==(const Matrix&) const = default;
};

/// Labelled examples: one feature row per label.
struct Samples {
  Matrix features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols; }
  bool operator==(const Samples&) const = default;
};

enum class ModelKind { logistic, mlp1, quadratic };

struct ModelSpec {
  ModelKind kind = ModelKind::logistic;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;  // mlp1 only
  std::size_t n_classes = 0;

  std::size_t param_count() const;
  std::vector<LayerShape> layout() const;
  void validate() const;
};

const char* to_string(ModelKind kind) noexcept;
ModelKind parse_model_kind(const std::string& name);

/// Uniform in ±1/sqrt(fan_in) for every layer, bias included.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Mean softmax cross-entropy over the selected rows and its exact gradient.
/// The quadratic diagnostic ignores the data: loss = ½‖θ‖², grad = θ.
LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params, const Samples& data,
                       std::span<const std::size_t> rows);

/// Whole-dataset overload.
LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params, const Samples& data);

struct Evaluation {
  double accuracy = 0.0;  ///< top-1; 0 for the quadratic diagnostic
  double loss = 0.0;
};

Evaluation evaluate(const ModelSpec& spec, const ParamVector& params, const Samples& data);

/// Which coordinates local training records after every step.
struct TrackSpec {
  enum class Mode { none, all, subsample };
  Mode mode = Mode::none;
  std::size_t count = 0;       ///< subsample size
  std::uint64_t seed = 0;      ///< subsample selection seed

  static TrackSpec none() { return {}; }
  static TrackSpec all() { return {Mode::all, 0, 0}; }
  static TrackSpec subsample(std::size_t count, std::uint64_t seed) {
    return {Mode::subsample, count, seed};
  }
  /// All coordinates below kAutoTrackLimit parameters, otherwise a subsample of that size.
  static TrackSpec automatic(std::size_t param_count, std::uint64_t seed);

  /// Sorted coordinate indices selected out of param_count.
  std::vector<std::size_t> indices(std::size_t param_count) const;
};

inline constexpr std::size_t kAutoTrackLimit = 100000;

struct TrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 10;
  double eta = 0.01;
  std::uint64_t seed = 0;
  TrackSpec track;
};

struct LocalTrainReport {
  ParamVector params_after;
  double update_norm = 0.0;
  std::size_t n_samples = 0;
  std::size_t steps_taken = 0;
  std::vector<std::size_t> tracked;               ///< coordinate indices
  std::vector<ou::Trajectory> trajectory;         ///< one per tracked coordinate, dt = 1

  bool has_trajectory() const noexcept { return !tracked.empty(); }
};

/// E epochs of mini-batch SGD with per-epoch Fisher-Yates reshuffling; the
/// last short batch is kept. Deterministic for a given seed.
LocalTrainReport local_train(const ModelSpec& spec, const ParamVector& start, const Samples& data,
                             const TrainOptions& options);

}  // namespace fedsample
