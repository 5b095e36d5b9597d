#pragma once

// Per-scale multi-label bag classifier:
//
//   H = relu(encoder(x_i))        per instance, Q -> D
//   L = relu(reducer(H))          per instance, D -> R (512 by default)
//   M = mean_i L                  bag embedding
//   p = sigmoid(classifier(M))    R -> C, one probability per feature
//
// trained per bag with binary cross-entropy and SGD with classical momentum.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dk/ensemble.hpp"

namespace dk {

class EmbedNetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged; carries where it happened.
class DivergenceError : public EmbedNetError {
 public:
  DivergenceError(int epoch, std::size_t bag, const std::string& slide_id);
  int epoch() const { return epoch_; }
  std::size_t bag() const { return bag_; }

 private:
  int epoch_;
  std::size_t bag_;
};

struct Bag {
  std::string slide_id;
  int scale_index = 1;
  int bag_id = 0;
  std::size_t width = 0;           ///< Q
  std::vector<double> instances;   ///< k rows of width Q, row-major
  Bits label;

  std::size_t size() const { return width ? instances.size() / width : 0; }
  std::span<const double> instance(std::size_t i) const {
    return {instances.data() + i * width, width};
  }
};

/// Fully connected layer, weights row-major out x in.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  DenseLayer() = default;
  DenseLayer(std::size_t in_dim, std::size_t out_dim)
      : in(in_dim), out(out_dim), weight(in_dim * out_dim, 0.0), bias(out_dim, 0.0) {}

  std::span<const double> row(std::size_t o) const { return {weight.data() + o * in, in}; }
  std::span<double> row(std::size_t o) { return {weight.data() + o * in, in}; }
  bool operator==(const DenseLayer&) const = default;
};

struct ModelParams {
  DenseLayer encoder;     ///< Q -> D
  DenseLayer reducer;     ///< D -> R
  DenseLayer classifier;  ///< R -> C

  std::size_t input_width() const { return encoder.in; }
  std::size_t num_features() const { return classifier.out; }
  /// Zero-filled parameters of the same shape.
  ModelParams zeros_like() const;
  bool operator==(const ModelParams&) const = default;
};

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::size_t hidden_width = 64;    ///< D
  std::size_t reduced_width = 512;  ///< R

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

inline constexpr double kProbEpsilon = 1e-7;

/// Glorot-uniform weights, zero biases, from a generator seeded with `seed`.
ModelParams init_params(std::size_t input_width, std::size_t num_features, const TrainConfig& cfg);

std::vector<double> forward_bag(const ModelParams& p, const Bag& bag);

/// Mean binary cross-entropy; probabilities are clamped to [eps, 1 - eps].
double bce_loss(std::span<const double> pred, const Bits& label);

/// The same loss computed from logits with the log-sum-exp form.
double bce_with_logits(std::span<const double> logits, const Bits& label);

/// Loss and exact gradient of bce_loss(forward_bag(p, bag), bag.label).
struct LossAndGrad {
  double loss = 0.0;
  ModelParams grad;
};
LossAndGrad loss_and_grad(const ModelParams& p, const Bag& bag);

/// Momentum buffers, one per parameter.
struct MomentumState {
  ModelParams buffer;
};
MomentumState make_momentum_state(const ModelParams& p);

/// buf = mu * buf + grad; param -= lr * buf, for every parameter.
void sgd_step(ModelParams& p, const ModelParams& grad, MomentumState& state, double lr, double mu);

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Trains one scale's model for cfg.epochs passes over `bags` in the given
/// order, one update per bag.
ModelParams train(std::span<const Bag> bags, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

BagPrediction predict_bag_probs(const ModelParams& p, const Bag& bag);

/// Binary checkpoint holding config, seed, shapes and raw doubles.
struct Checkpoint {
  int scale_index = 1;
  TrainConfig config;
  ModelParams params;

  bool operator==(const Checkpoint&) const = default;
};
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dk
