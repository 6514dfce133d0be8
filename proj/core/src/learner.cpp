#include "fedsample/learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsample/error.hpp"
#include "fedsample/rng.hpp"

namespace fedsample {

std::size_t LayerShape::size() const noexcept {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

void ParamVector::check_shape() const {
  std::size_t total = 0;
  for (const auto& layer : shape) total += layer.size();
  require(total == data.size(), ErrorCode::invalid_argument,
          "parameter layout does not match parameter count");
}

bool ParamVector::all_finite() const noexcept {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

double l2_distance(const ParamVector& lhs, const ParamVector& rhs) {
  require(lhs.size() == rhs.size(), ErrorCode::invalid_argument, "l2_distance: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    const double d = lhs.data[i] - rhs.data[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

const char* to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::logistic: return "logistic";
    case ModelKind::mlp1: return "mlp1";
    case ModelKind::quadratic: return "quadratic";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "logistic") return ModelKind::logistic;
  if (name == "mlp1") return ModelKind::mlp1;
  if (name == "quadratic" || name == "quadratic-diagnostic") return ModelKind::quadratic;
  fail(ErrorCode::invalid_argument, "unknown model kind '" + name + "'");
}

void ModelSpec::validate() const {
  require(input_dim >= 1, ErrorCode::invalid_argument, "model input_dim must be >= 1");
  if (kind == ModelKind::quadratic) return;
  require(n_classes >= 2, ErrorCode::invalid_argument, "model n_classes must be >= 2");
  if (kind == ModelKind::mlp1) {
    require(hidden_dim >= 1, ErrorCode::invalid_argument, "mlp1 hidden_dim must be >= 1");
  }
}

std::vector<LayerShape> ModelSpec::layout() const {
  switch (kind) {
    case ModelKind::logistic:
      return {{"dense.weight", {n_classes, input_dim}}, {"dense.bias", {n_classes}}};
    case ModelKind::mlp1:
      return {{"dense1.weight", {hidden_dim, input_dim}},
              {"dense1.bias", {hidden_dim}},
              {"dense2.weight", {n_classes, hidden_dim}},
              {"dense2.bias", {n_classes}}};
    case ModelKind::quadratic:
      return {{"theta", {input_dim}}};
  }
  return {};
}

std::size_t ModelSpec::param_count() const {
  std::size_t total = 0;
  for (const auto& layer : layout()) total += layer.size();
  return total;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p;
  p.shape = spec.layout();
  p.data.reserve(spec.param_count());
  Rng rng(seed);
  auto fill = [&](std::size_t count, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) p.data.push_back(rng.uniform(-bound, bound));
  };
  switch (spec.kind) {
    case ModelKind::logistic:
      fill(spec.n_classes * spec.input_dim, spec.input_dim);
      fill(spec.n_classes, spec.input_dim);
      break;
    case ModelKind::mlp1:
      fill(spec.hidden_dim * spec.input_dim, spec.input_dim);
      fill(spec.hidden_dim, spec.input_dim);
      fill(spec.n_classes * spec.hidden_dim, spec.hidden_dim);
      fill(spec.n_classes, spec.hidden_dim);
      break;
    case ModelKind::quadratic:
      fill(spec.input_dim, 1);
      break;
  }
  return p;
}

namespace {

void check_inputs(const ModelSpec& spec, const ParamVector& params, const Samples& data,
                  std::span<const std::size_t> rows) {
  require(params.size() == spec.param_count(), ErrorCode::invalid_argument,
          "parameter count does not match model");
  require(params.all_finite(), ErrorCode::numeric_error, "non-finite parameters");
  require(!rows.empty(), ErrorCode::invalid_argument, "batch must be non-empty");
  if (spec.kind == ModelKind::quadratic) return;
  require(data.features.cols == spec.input_dim, ErrorCode::invalid_argument,
          "feature dimension does not match model input_dim");
  require(data.features.rows == data.labels.size(), ErrorCode::invalid_argument,
          "feature rows and labels differ in count");
  for (auto r : rows) {
    require(r < data.size(), ErrorCode::invalid_argument, "batch row out of range");
    const int y = data.labels[r];
    require(y >= 0 && static_cast<std::size_t>(y) < spec.n_classes, ErrorCode::invalid_argument,
            "label out of range");
  }
}

// Turns logits into probabilities in place; returns −log p[label].
double softmax_xent(std::span<double> z, int label) {
  const double zmax = *std::max_element(z.begin(), z.end());
  const double z_label = z[static_cast<std::size_t>(label)];
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return std::log(sum) - (z_label - zmax);
}

// Row-major dense layer: out = W x + b.
void affine(const double* w, const double* b, std::span<const double> x, std::span<double> out) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < out.size(); ++o) {
    double acc = b[o];
    const double* wr = w + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += wr[i] * x[i];
    out[o] = acc;
  }
}

struct Forward {
  std::vector<double> hidden_pre;
  std::vector<double> hidden;
  std::vector<double> probs;
};

// Fills fwd.probs (softmax output); returns per-example loss.
double forward(const ModelSpec& spec, const std::vector<double>& p, std::span<const double> x,
               int label, Forward& fwd) {
  fwd.probs.assign(spec.n_classes, 0.0);
  if (spec.kind == ModelKind::logistic) {
    const double* w = p.data();
    const double* b = w + spec.n_classes * spec.input_dim;
    affine(w, b, x, fwd.probs);
  } else {
    const std::size_t h = spec.hidden_dim;
    const double* w1 = p.data();
    const double* b1 = w1 + h * spec.input_dim;
    const double* w2 = b1 + h;
    const double* b2 = w2 + spec.n_classes * h;
    fwd.hidden_pre.assign(h, 0.0);
    affine(w1, b1, x, fwd.hidden_pre);
    fwd.hidden.resize(h);
    for (std::size_t j = 0; j < h; ++j) fwd.hidden[j] = fwd.hidden_pre[j] > 0.0 ? fwd.hidden_pre[j] : 0.0;
    affine(w2, b2, fwd.hidden, fwd.probs);
  }
  return softmax_xent(fwd.probs, label);
}

}  // namespace

LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params, const Samples& data,
                       std::span<const std::size_t> rows) {
  check_inputs(spec, params, data, rows);
  LossGrad out;
  out.grad.shape = params.shape;
  out.grad.data.assign(params.size(), 0.0);

  if (spec.kind == ModelKind::quadratic) {
    double sq = 0.0;
    for (double v : params.data) sq += v * v;
    out.loss = 0.5 * sq;
    out.grad.data = params.data;
    return out;
  }

  const std::size_t d = spec.input_dim;
  const std::size_t c = spec.n_classes;
  const std::size_t h = spec.hidden_dim;
  auto& g = out.grad.data;
  const auto& p = params.data;
  Forward fwd;
  std::vector<double> dhidden;

  double loss = 0.0;
  for (auto r : rows) {
    const auto x = data.features.row(r);
    const int y = data.labels[r];
    loss += forward(spec, p, x, y, fwd);
    auto& dz = fwd.probs;
    dz[static_cast<std::size_t>(y)] -= 1.0;

    if (spec.kind == ModelKind::logistic) {
      double* gw = g.data();
      double* gb = gw + c * d;
      for (std::size_t o = 0; o < c; ++o) {
        for (std::size_t i = 0; i < d; ++i) gw[o * d + i] += dz[o] * x[i];
        gb[o] += dz[o];
      }
    } else {
      const double* w2 = p.data() + h * d + h;
      double* gw1 = g.data();
      double* gb1 = gw1 + h * d;
      double* gw2 = gb1 + h;
      double* gb2 = gw2 + c * h;
      dhidden.assign(h, 0.0);
      for (std::size_t o = 0; o < c; ++o) {
        for (std::size_t j = 0; j < h; ++j) {
          gw2[o * h + j] += dz[o] * fwd.hidden[j];
          dhidden[j] += w2[o * h + j] * dz[o];
        }
        gb2[o] += dz[o];
      }
      for (std::size_t j = 0; j < h; ++j) {
        if (fwd.hidden_pre[j] <= 0.0) continue;
        for (std::size_t i = 0; i < d; ++i) gw1[j * d + i] += dhidden[j] * x[i];
        gb1[j] += dhidden[j];
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (double& v : g) v *= inv_n;
  out.loss = loss * inv_n;
  return out;
}

LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params, const Samples& data) {
  std::vector<std::size_t> rows(std::max<std::size_t>(data.size(), spec.kind == ModelKind::quadratic ? 1 : 0));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return loss_and_grad(spec, params, data, rows);
}

Evaluation evaluate(const ModelSpec& spec, const ParamVector& params, const Samples& data) {
  Evaluation ev;
  if (spec.kind == ModelKind::quadratic) {
    double sq = 0.0;
    for (double v : params.data) sq += v * v;
    ev.loss = 0.5 * sq;
    return ev;
  }
  require(!data.labels.empty(), ErrorCode::invalid_argument, "evaluate: empty data");
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  check_inputs(spec, params, data, all);
  Forward fwd;
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    const int y = data.labels[r];
    loss += forward(spec, params.data, data.features.row(r), y, fwd);
    const auto best = std::max_element(fwd.probs.begin(), fwd.probs.end()) - fwd.probs.begin();
    if (best == y) ++correct;
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  ev.loss = loss / static_cast<double>(data.size());
  return ev;
}

TrackSpec TrackSpec::automatic(std::size_t param_count, std::uint64_t seed) {
  if (param_count < kAutoTrackLimit) return all();
  return subsample(kAutoTrackLimit, seed);
}

std::vector<std::size_t> TrackSpec::indices(std::size_t param_count) const {
  std::vector<std::size_t> idx;
  switch (mode) {
    case Mode::none:
      break;
    case Mode::all:
      idx.resize(param_count);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      break;
    case Mode::subsample: {
      idx.resize(param_count);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      const std::size_t k = std::min(count, param_count);
      Rng rng(derive_seed(seed, {stream::track}));
      for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(param_count - i));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(k);
      std::sort(idx.begin(), idx.end());
      break;
    }
  }
  return idx;
}

LocalTrainReport local_train(const ModelSpec& spec, const ParamVector& start, const Samples& data,
                             const TrainOptions& options) {
  require(data.size() > 0, ErrorCode::invalid_argument, "local_train: empty dataset");
  require(options.batch_size >= 1, ErrorCode::invalid_argument, "local_train: batch size must be >= 1");
  require(std::isfinite(options.eta) && options.eta >= 0.0, ErrorCode::invalid_argument,
          "local_train: eta must be finite and >= 0");
  require(start.size() == spec.param_count(), ErrorCode::invalid_argument,
          "local_train: parameter count does not match model");
  require(start.all_finite(), ErrorCode::numeric_error, "local_train: non-finite start parameters");

  LocalTrainReport report;
  report.n_samples = data.size();
  report.params_after = start;
  auto& w = report.params_after.data;

  report.tracked = options.track.indices(start.size());
  const std::size_t n_tracked = report.tracked.size();
  const std::size_t n = data.size();
  const std::size_t B = options.batch_size;
  const std::size_t batches_per_epoch = (n + B - 1) / B;
  const std::size_t total_steps = options.epochs * batches_per_epoch;

  // Row-major (step, tracked coordinate) buffer, transposed into trajectories at the end.
  std::vector<double> path;
  if (n_tracked > 0) {
    path.reserve((total_steps + 1) * n_tracked);
    for (auto j : report.tracked) path.push_back(w[j]);
  }

  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(options.seed, {stream::shuffle, epoch}));
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.below(i));
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t first = 0; first < n; first += B) {
      const std::size_t len = std::min(B, n - first);
      const auto lg = loss_and_grad(spec, report.params_after, data,
                                    std::span<const std::size_t>(order.data() + first, len));
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= options.eta * lg.grad.data[k];
      require(report.params_after.all_finite(), ErrorCode::numeric_error,
              "local_train: parameters became non-finite");
      ++report.steps_taken;
      for (auto j : report.tracked) path.push_back(w[j]);
    }
  }

  report.update_norm = l2_distance(report.params_after, start);

  if (n_tracked > 0) {
    report.trajectory.reserve(n_tracked);
    const std::size_t len = report.steps_taken + 1;
    std::vector<double> values(len);
    for (std::size_t c = 0; c < n_tracked; ++c) {
      for (std::size_t s = 0; s < len; ++s) values[s] = path[s * n_tracked + c];
      report.trajectory.emplace_back(values, 1.0);
    }
  }
  return report;
}

}  // namespace fedsample
