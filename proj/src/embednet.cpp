#include "dk/embednet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "dk/kernels.hpp"

namespace dk {

namespace {

struct Activations {
  std::size_t k = 0;
  std::vector<double> pre_h, h;  // k x D
  std::vector<double> pre_l, l;  // k x R
  std::vector<double> m;         // R
  std::vector<double> logits;    // C
  std::vector<double> probs;     // C
};

// Keeps outputs strictly inside (0, 1) even when exp under/overflows.
constexpr double kMinProb = std::numeric_limits<double>::min();
const double kMaxProb = std::nextafter(1.0, 0.0);

double sigmoid(double z) {
  double p;
  if (z >= 0.0) {
    p = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    p = e / (1.0 + e);
  }
  return std::clamp(p, kMinProb, kMaxProb);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool all_finite(const DenseLayer& layer) { return all_finite(layer.weight) && all_finite(layer.bias); }

bool all_finite(const ModelParams& p) {
  return all_finite(p.encoder) && all_finite(p.reducer) && all_finite(p.classifier);
}

void check_layer(const DenseLayer& layer, const char* name) {
  if (layer.weight.size() != layer.in * layer.out || layer.bias.size() != layer.out)
    throw EmbedNetError(std::string(name) + " layer has inconsistent shape");
}

void check_params(const ModelParams& p) {
  check_layer(p.encoder, "encoder");
  check_layer(p.reducer, "reducer");
  check_layer(p.classifier, "classifier");
  if (p.reducer.in != p.encoder.out || p.classifier.in != p.reducer.out)
    throw EmbedNetError("layer widths do not chain");
  if (!all_finite(p)) throw EmbedNetError("model parameters contain non-finite values");
}

void check_bag(const ModelParams& p, const Bag& bag) {
  if (bag.width != p.input_width())
    throw EmbedNetError("bag " + std::to_string(bag.bag_id) + " of slide '" + bag.slide_id +
                        "' has instance width " + std::to_string(bag.width) + ", model expects " +
                        std::to_string(p.input_width()));
  if (bag.width == 0 || bag.instances.empty() || bag.instances.size() % bag.width != 0)
    throw EmbedNetError("bag " + std::to_string(bag.bag_id) + " of slide '" + bag.slide_id +
                        "' has no complete instances");
  if (!all_finite(bag.instances))
    throw EmbedNetError("bag " + std::to_string(bag.bag_id) + " of slide '" + bag.slide_id +
                        "' contains non-finite instance values");
}

void check_same_shape(const ModelParams& a, const ModelParams& b) {
  auto same = [](const DenseLayer& x, const DenseLayer& y) {
    return x.in == y.in && x.out == y.out && x.weight.size() == y.weight.size() &&
           x.bias.size() == y.bias.size();
  };
  if (!same(a.encoder, b.encoder) || !same(a.reducer, b.reducer) ||
      !same(a.classifier, b.classifier))
    throw EmbedNetError("parameter shapes differ");
}

// out[o] = dot(row o, x) + bias[o]
void dense(const DenseLayer& layer, std::span<const double> x, std::span<double> out) {
  for (std::size_t o = 0; o < layer.out; ++o) out[o] = kernels::dot(layer.row(o), x) + layer.bias[o];
}

void forward(const ModelParams& p, const Bag& bag, Activations& a) {
  const std::size_t k = bag.size();
  const std::size_t D = p.encoder.out, R = p.reducer.out, C = p.classifier.out;
  a.k = k;
  a.pre_h.assign(k * D, 0.0);
  a.h.assign(k * D, 0.0);
  a.pre_l.assign(k * R, 0.0);
  a.l.assign(k * R, 0.0);
  a.m.assign(R, 0.0);
  a.logits.assign(C, 0.0);
  a.probs.assign(C, 0.0);

  for (std::size_t i = 0; i < k; ++i) {
    std::span<double> pre_h(a.pre_h.data() + i * D, D), h(a.h.data() + i * D, D);
    dense(p.encoder, bag.instance(i), pre_h);
    for (std::size_t o = 0; o < D; ++o) h[o] = std::max(pre_h[o], 0.0);

    std::span<double> pre_l(a.pre_l.data() + i * R, R), l(a.l.data() + i * R, R);
    dense(p.reducer, h, pre_l);
    for (std::size_t o = 0; o < R; ++o) l[o] = std::max(pre_l[o], 0.0);
    for (std::size_t o = 0; o < R; ++o) a.m[o] += l[o];
  }
  const double kd = static_cast<double>(k);
  for (auto& v : a.m) v /= kd;

  dense(p.classifier, a.m, a.logits);
  for (std::size_t c = 0; c < C; ++c) a.probs[c] = sigmoid(a.logits[c]);
}

// 53 random mantissa bits; unlike std::uniform_real_distribution the
// sequence is the same under every standard library.
double uniform01(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

void glorot(DenseLayer& layer, std::mt19937_64& gen) {
  const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
  for (auto& w : layer.weight) w = limit * (2.0 * uniform01(gen) - 1.0);
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

}  // namespace

DivergenceError::DivergenceError(int epoch, std::size_t bag, const std::string& slide_id)
    : EmbedNetError("training diverged at epoch " + std::to_string(epoch) + ", bag " +
                    std::to_string(bag) + " (slide '" + slide_id + "')"),
      epoch_(epoch),
      bag_(bag) {}

ModelParams ModelParams::zeros_like() const {
  return {DenseLayer(encoder.in, encoder.out), DenseLayer(reducer.in, reducer.out),
          DenseLayer(classifier.in, classifier.out)};
}

void TrainConfig::validate() const {
  if (epochs < 1) throw EmbedNetError("epochs must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw EmbedNetError("learning rate must be a finite non-negative number");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw EmbedNetError("momentum must lie in [0, 1)");
  if (hidden_width == 0 || reduced_width == 0) throw EmbedNetError("layer widths must be positive");
}

ModelParams init_params(std::size_t input_width, std::size_t num_features, const TrainConfig& cfg) {
  if (input_width == 0 || num_features == 0) throw EmbedNetError("model dimensions must be positive");
  ModelParams p{DenseLayer(input_width, cfg.hidden_width),
                DenseLayer(cfg.hidden_width, cfg.reduced_width),
                DenseLayer(cfg.reduced_width, num_features)};
  std::mt19937_64 gen(cfg.seed);
  glorot(p.encoder, gen);
  glorot(p.reducer, gen);
  glorot(p.classifier, gen);
  return p;
}

std::vector<double> forward_bag(const ModelParams& p, const Bag& bag) {
  check_params(p);
  check_bag(p, bag);
  Activations a;
  forward(p, bag, a);
  return a.probs;
}

double bce_loss(std::span<const double> pred, const Bits& label) {
  if (pred.size() != label.size())
    throw EmbedNetError("bce_loss: " + std::to_string(pred.size()) + " predictions vs " +
                        std::to_string(label.size()) + " labels");
  if (pred.empty()) throw EmbedNetError("bce_loss: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::isnan(pred[i])) throw EmbedNetError("bce_loss: NaN prediction");
    const double q = std::clamp(pred[i], kProbEpsilon, 1.0 - kProbEpsilon);
    sum -= label[i] ? std::log(q) : std::log1p(-q);
  }
  return sum / static_cast<double>(pred.size());
}

double bce_with_logits(std::span<const double> logits, const Bits& label) {
  if (logits.size() != label.size())
    throw EmbedNetError("bce_with_logits: " + std::to_string(logits.size()) + " logits vs " +
                        std::to_string(label.size()) + " labels");
  if (logits.empty()) throw EmbedNetError("bce_with_logits: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    sum += std::max(z, 0.0) - z * (label[i] ? 1.0 : 0.0) + std::log1p(std::exp(-std::abs(z)));
  }
  return sum / static_cast<double>(logits.size());
}

LossAndGrad loss_and_grad(const ModelParams& p, const Bag& bag) {
  check_params(p);
  check_bag(p, bag);
  if (bag.label.size() != p.num_features())
    throw EmbedNetError("bag " + std::to_string(bag.bag_id) + " of slide '" + bag.slide_id +
                        "' has " + std::to_string(bag.label.size()) + " labels, model predicts " +
                        std::to_string(p.num_features()));
  Activations a;
  forward(p, bag, a);

  LossAndGrad out{bce_loss(a.probs, bag.label), p.zeros_like()};
  ModelParams& g = out.grad;
  const std::size_t k = a.k, D = p.encoder.out, R = p.reducer.out, C = p.classifier.out;

  // d(mean BCE)/d(logit) = (p - y) / C
  std::vector<double> dz(C);
  for (std::size_t c = 0; c < C; ++c)
    dz[c] = (a.probs[c] - (bag.label[c] ? 1.0 : 0.0)) / static_cast<double>(C);

  std::vector<double> dm(R, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    g.classifier.bias[c] = dz[c];
    kernels::axpy(dz[c], a.m, g.classifier.row(c));
    kernels::axpy(dz[c], p.classifier.row(c), dm);
  }

  // Mean pooling spreads dm evenly over the k instances.
  const double kd = static_cast<double>(k);
  for (auto& v : dm) v /= kd;

  std::vector<double> dpre_l(R), dh(D), dpre_h(D);
  for (std::size_t i = 0; i < k; ++i) {
    std::span<const double> pre_l(a.pre_l.data() + i * R, R);
    std::span<const double> h(a.h.data() + i * D, D);
    std::span<const double> pre_h(a.pre_h.data() + i * D, D);

    std::fill(dh.begin(), dh.end(), 0.0);
    for (std::size_t o = 0; o < R; ++o) {
      dpre_l[o] = pre_l[o] > 0.0 ? dm[o] : 0.0;
      if (dpre_l[o] == 0.0) continue;
      g.reducer.bias[o] += dpre_l[o];
      kernels::axpy(dpre_l[o], h, g.reducer.row(o));
      kernels::axpy(dpre_l[o], p.reducer.row(o), dh);
    }

    const auto x = bag.instance(i);
    for (std::size_t o = 0; o < D; ++o) {
      dpre_h[o] = pre_h[o] > 0.0 ? dh[o] : 0.0;
      if (dpre_h[o] == 0.0) continue;
      g.encoder.bias[o] += dpre_h[o];
      kernels::axpy(dpre_h[o], x, g.encoder.row(o));
    }
  }
  return out;
}

MomentumState make_momentum_state(const ModelParams& p) { return {p.zeros_like()}; }

void sgd_step(ModelParams& p, const ModelParams& grad, MomentumState& state, double lr, double mu) {
  check_same_shape(p, grad);
  check_same_shape(p, state.buffer);
  if (!all_finite(grad)) throw EmbedNetError("sgd_step: non-finite gradient");
  auto step = [&](DenseLayer& layer, const DenseLayer& g, DenseLayer& buf) {
    kernels::momentum_step(layer.weight, buf.weight, g.weight, lr, mu);
    kernels::momentum_step(layer.bias, buf.bias, g.bias, lr, mu);
  };
  step(p.encoder, grad.encoder, state.buffer.encoder);
  step(p.reducer, grad.reducer, state.buffer.reducer);
  step(p.classifier, grad.classifier, state.buffer.classifier);
}

ModelParams train(std::span<const Bag> bags, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (bags.empty()) throw EmbedNetError("cannot train on an empty dataset");
  const auto& first = bags.front();
  for (const auto& bag : bags) {
    if (bag.scale_index != first.scale_index)
      throw EmbedNetError("training bags mix scales " + std::to_string(first.scale_index) +
                          " and " + std::to_string(bag.scale_index));
    if (bag.width != first.width || bag.label.size() != first.label.size())
      throw EmbedNetError("training bags have inconsistent shapes");
  }

  ModelParams p = init_params(first.width, first.label.size(), cfg);
  MomentumState state = make_momentum_state(p);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double total = 0.0;
    for (std::size_t b = 0; b < bags.size(); ++b) {
      LossAndGrad lg = loss_and_grad(p, bags[b]);
      if (!std::isfinite(lg.loss) || !all_finite(lg.grad))
        throw DivergenceError(epoch, b, bags[b].slide_id);
      sgd_step(p, lg.grad, state, cfg.learning_rate, cfg.momentum);
      if (!all_finite(p)) throw DivergenceError(epoch, b, bags[b].slide_id);
      total += lg.loss;
    }
    if (on_epoch) on_epoch(epoch, total / static_cast<double>(bags.size()));
  }
  return p;
}

BagPrediction predict_bag_probs(const ModelParams& p, const Bag& bag) {
  return {bag.slide_id, bag.scale_index, bag.bag_id, forward_bag(p, bag)};
}

// Checkpoint layout, little-endian:
//   "DKCKPT\0\0" | u32 version | i32 scale | i32 epochs | f64 lr | f64 momentum
//   | u64 seed | u64 hidden | u64 reduced | 3 x (u64 in | u64 out | weights | biases)
namespace {

constexpr char kMagic[8] = {'D', 'K', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw EmbedNetError("checkpoint is truncated");
  return value;
}

void put_layer(std::ostream& out, const DenseLayer& layer) {
  put<std::uint64_t>(out, layer.in);
  put<std::uint64_t>(out, layer.out);
  out.write(reinterpret_cast<const char*>(layer.weight.data()),
            static_cast<std::streamsize>(layer.weight.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(layer.bias.data()),
            static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
}

DenseLayer get_layer(std::istream& in) {
  const auto in_dim = get<std::uint64_t>(in);
  const auto out_dim = get<std::uint64_t>(in);
  if (in_dim == 0 || out_dim == 0 || in_dim > (1u << 20) || out_dim > (1u << 20))
    throw EmbedNetError("checkpoint has implausible layer shape");
  DenseLayer layer(in_dim, out_dim);
  auto read = [&](std::vector<double>& v) {
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double))))
      throw EmbedNetError("checkpoint is truncated");
  };
  read(layer.weight);
  read(layer.bias);
  return layer;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  check_params(ckpt.params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EmbedNetError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::int32_t>(out, ckpt.scale_index);
  put<std::int32_t>(out, ckpt.config.epochs);
  put<double>(out, ckpt.config.learning_rate);
  put<double>(out, ckpt.config.momentum);
  put<std::uint64_t>(out, ckpt.config.seed);
  put<std::uint64_t>(out, ckpt.config.hidden_width);
  put<std::uint64_t>(out, ckpt.config.reduced_width);
  put_layer(out, ckpt.params.encoder);
  put_layer(out, ckpt.params.reducer);
  put_layer(out, ckpt.params.classifier);
  if (!out) throw EmbedNetError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmbedNetError("cannot open checkpoint '" + path.string() + "'");
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw EmbedNetError("'" + path.string() + "' is not a checkpoint file");
  if (const auto version = get<std::uint32_t>(in); version != kVersion)
    throw EmbedNetError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.scale_index = get<std::int32_t>(in);
  ckpt.config.epochs = get<std::int32_t>(in);
  ckpt.config.learning_rate = get<double>(in);
  ckpt.config.momentum = get<double>(in);
  ckpt.config.seed = get<std::uint64_t>(in);
  ckpt.config.hidden_width = get<std::uint64_t>(in);
  ckpt.config.reduced_width = get<std::uint64_t>(in);
  ckpt.params.encoder = get_layer(in);
  ckpt.params.reducer = get_layer(in);
  ckpt.params.classifier = get_layer(in);
  check_params(ckpt.params);
  return ckpt;
}

}  // namespace dk
