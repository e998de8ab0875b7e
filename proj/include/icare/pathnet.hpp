#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "icare/checkpoint.hpp"
#include "icare/ops.hpp"
#include "icare/optim.hpp"
#include "icare/scenegen.hpp"
#include "icare/tape.hpp"

namespace icare {

/// Flattened last-conv activation size at the reference raster resolution
/// (8 channels x 6 x 6 after four stride-2 stages from 96).
inline constexpr Index kContextDim = 8 * 6 * 6;

inline constexpr const char* kPathNetArch =
    "conv7-12k5s2p2/bn/relu,conv12-16k5s2p2/bn/relu,conv16-24k3s2p1/bn/relu,"
    "conv24-32k3s2p1/bn/relu,conv32-8k3s1p1/relu;"
    "fc288-128/bn/relu/drop,fc128-64/bn/relu/drop,fc64-32/relu,fc32-10";

/// Flattened last-conv activation of the path predictor; the scene-level
/// context feature consumed by the fusion stage.
struct ContextFeature {
  Tensor<double> values;  // [288], finite, >= 0 (post-ReLU)
};

/// Ego path predictor: five convs (the last one un-normalized) feeding four
/// fully connected layers down to the 10 per-step heading deltas. The conv
/// trunk doubles as the context extractor, so both consumers share one code
/// path. Non-copyable: the ParameterSet holds pointers into the layer structs.
struct PathNet {
  ConvParams<double> conv1, conv2, conv3, conv4, conv5;
  BatchNormParams<double> bn1, bn2, bn3, bn4;
  DenseParams<double> fc1, fc2, fc3, fc4;
  BatchNormParams<double> bn_fc1, bn_fc2;
  DropoutConfig dropout{};
  ParameterSet<double> params;

  PathNet() = default;
  PathNet(const PathNet&) = delete;
  PathNet& operator=(const PathNet&) = delete;

  void init(std::uint64_t seed) {
    RandomStream rng(RandomStream::derive(seed, 0xBA7));
    conv1 = make_conv<double>("conv1", kRasterChannels, 12, 5, 5, 2, 2, rng);
    conv2 = make_conv<double>("conv2", 12, 16, 5, 5, 2, 2, rng);
    conv3 = make_conv<double>("conv3", 16, 24, 3, 3, 2, 1, rng);
    conv4 = make_conv<double>("conv4", 24, 32, 3, 3, 2, 1, rng);
    conv5 = make_conv<double>("conv5", 32, 8, 3, 3, 1, 1, rng);
    bn1 = make_batchnorm<double>("bn1", 12);
    bn2 = make_batchnorm<double>("bn2", 16);
    bn3 = make_batchnorm<double>("bn3", 24);
    bn4 = make_batchnorm<double>("bn4", 32);
    fc1 = make_dense<double>("fc1", kContextDim, 128, rng);
    fc2 = make_dense<double>("fc2", 128, 64, rng);
    fc3 = make_dense<double>("fc3", 64, 32, rng);
    fc4 = make_dense<double>("fc4", 32, 10, rng);
    bn_fc1 = make_batchnorm<double>("bn_fc1", 128);
    bn_fc2 = make_batchnorm<double>("bn_fc2", 64);

    params = ParameterSet<double>();
    for (ConvParams<double>* c : {&conv1, &conv2, &conv3, &conv4, &conv5}) {
      params.add(c->kernel);
      params.add(c->bias);
    }
    for (DenseParams<double>* d : {&fc1, &fc2, &fc3, &fc4}) {
      params.add(d->weight);
      params.add(d->bias);
    }
    for (BatchNormParams<double>* b : {&bn1, &bn2, &bn3, &bn4, &bn_fc1, &bn_fc2}) {
      params.add(b->gamma);
      params.add(b->beta);
    }
  }

  /// Batchnorm running statistics (checkpointed alongside the parameters).
  BufferList<double> buffers() {
    BufferList<double> list;
    for (BatchNormParams<double>* b : {&bn1, &bn2, &bn3, &bn4, &bn_fc1, &bn_fc2}) {
      list.emplace_back(b->gamma.name.substr(0, b->gamma.name.find('.')) + ".running_mean",
                        &b->running_mean);
      list.emplace_back(b->gamma.name.substr(0, b->gamma.name.find('.')) + ".running_var",
                        &b->running_var);
    }
    return list;
  }

  /// Conv trunk ending in the flattened [B x 288] context activation. Both
  /// predict_path and extract_context run exactly this function.
  Var conv_stack(Tape<double>& t, Var x, bool training) {
    Var h = relu_forward(t, batchnorm_forward(t, bn1, conv2d_forward(t, conv1, x), training));
    h = relu_forward(t, batchnorm_forward(t, bn2, conv2d_forward(t, conv2, h), training));
    h = relu_forward(t, batchnorm_forward(t, bn3, conv2d_forward(t, conv3, h), training));
    h = relu_forward(t, batchnorm_forward(t, bn4, conv2d_forward(t, conv4, h), training));
    h = relu_forward(t, conv2d_forward(t, conv5, h));
    return reshape(t, h, {t.value(h).extent(0), kContextDim});
  }

  /// FC head on the flattened context: outputs normalized angles [B x 10].
  Var head(Tape<double>& t, Var feat, bool training, RandomStream& drop_rng) {
    Var h = relu_forward(t, batchnorm_forward(t, bn_fc1, dense_forward(t, fc1, feat), training));
    h = dropout_forward(t, dropout, h, training, drop_rng);
    h = relu_forward(t, batchnorm_forward(t, bn_fc2, dense_forward(t, fc2, h), training));
    h = dropout_forward(t, dropout, h, training, drop_rng);
    h = relu_forward(t, dense_forward(t, fc3, h));
    return dense_forward(t, fc4, h);
  }

  Var forward(Tape<double>& t, Var x, bool training, RandomStream& drop_rng) {
    return head(t, conv_stack(t, x, training), training, drop_rng);
  }

  /// Snapshot covers parameters and batchnorm running statistics: restoring
  /// a best-validation checkpoint must bring back the statistics that epoch
  /// validated with, not the final ones.
  std::vector<Tensor<double>> snapshot() {
    std::vector<Tensor<double>> s;
    for (auto* p : params.all()) s.push_back(p->value);
    for (auto& [name, buf] : buffers()) s.push_back(*buf);
    return s;
  }
  void restore(const std::vector<Tensor<double>>& s) {
    const auto bufs = buffers();
    if (s.size() != params.count() + bufs.size())
      throw UsageError("PathNet::restore: snapshot mismatch");
    for (std::size_t i = 0; i < params.count(); ++i) params.all()[i]->value = s[i];
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].second = s[params.count() + i];
  }
};

inline void save_pathnet(const std::string& path, PathNet& net, nlohmann::json meta,
                         const AdamState<double>* adam = nullptr) {
  meta["arch"] = kPathNetArch;
  meta["context_dim"] = kContextDim;
  save_checkpoint(path, meta, net.params, net.buffers(), adam);
}

inline nlohmann::json load_pathnet(const std::string& path, PathNet& net) {
  const nlohmann::json meta = peek_checkpoint_meta(path);
  if (!meta.contains("arch") || meta.at("arch").get<std::string>() != kPathNetArch)
    throw UsageError("load_pathnet: checkpoint " + path + " does not hold a path network");
  if (meta.value("context_dim", Index{0}) != kContextDim)
    throw UsageError("load_pathnet: checkpoint " + path + " has context dimension " +
                     std::to_string(meta.value("context_dim", Index{0})) + ", expected " +
                     std::to_string(kContextDim));
  if (net.params.count() == 0) net.init(0);
  return load_checkpoint(path, net.params, net.buffers());
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

/// Predicted future path in degrees. Inference mode: batchnorm running
/// statistics, dropout off. The network regresses normalized angles
/// (angles / 12); the output is rescaled back to degrees.
inline PathVector predict_path(PathNet& net, const Raster& raster) {
  if (net.params.count() == 0)
    throw UsageError("predict_path: network has no parameters (train or load a checkpoint first)");
  Tape<double> t;
  RandomStream unused(0);
  Var y = net.forward(t, t.leaf(raster_input(raster)), /*training=*/false, unused);
  const Tensor<double>& v = t.value(y);
  std::array<double, 10> n{};
  for (std::size_t i = 0; i < 10; ++i) n[i] = v[static_cast<Index>(i)];
  return PathVector::denormalized(n);
}

/// Flattened last-conv activation, inference mode. Shares conv_stack with
/// predict_path, so the two agree bit-for-bit on the same raster.
inline ContextFeature extract_context(PathNet& net, const Raster& raster) {
  if (net.params.count() == 0)
    throw UsageError(
        "extract_context: network has no parameters (train or load a checkpoint first)");
  Tape<double> t;
  Var feat = net.conv_stack(t, t.leaf(raster_input(raster)), /*training=*/false);
  ContextFeature c;
  c.values = t.value(feat).reshaped({kContextDim});
  return c;
}

// ---------------------------------------------------------------------------
// evaluation helpers
// ---------------------------------------------------------------------------

/// Mean squared error of the predicted path in squared degrees over the
/// given scene ids (mean over scenes and steps).
inline double path_mse(PathNet& net, const Dataset& ds, const std::vector<std::int64_t>& ids) {
  if (ids.empty()) throw UsageError("path_mse: empty id set");
  double sum = 0.0;
  for (std::int64_t id : ids) {
    const Scene& scene = ds.scene(id);
    const PathVector pred = predict_path(net, rasterize(scene));
    for (std::size_t i = 0; i < 10; ++i) {
      const double e = pred.angles[i] - scene.gt_path.angles[i];
      sum += e * e;
    }
  }
  return sum / (10.0 * static_cast<double>(ids.size()));
}

/// Per-step mean absolute error (degrees) across the given scene ids.
inline std::array<double, 10> path_error_by_step(PathNet& net, const Dataset& ds,
                                                 const std::vector<std::int64_t>& ids) {
  if (ids.empty()) throw UsageError("path_error_by_step: empty id set");
  std::array<double, 10> err{};
  for (std::int64_t id : ids) {
    const Scene& scene = ds.scene(id);
    const PathVector pred = predict_path(net, rasterize(scene));
    for (std::size_t i = 0; i < 10; ++i)
      err[i] += std::abs(pred.angles[i] - scene.gt_path.angles[i]);
  }
  for (double& e : err) e /= static_cast<double>(ids.size());
  return err;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct PathTrainConfig {
  int epochs = 30;
  int batch_size = 16;
  AdamConfig adam{0.005, 0.9, 0.99, 1e-8};
  double val_fraction = 0.15;
};

struct PathTrainResult {
  std::vector<double> loss_trace;  // per-epoch mean training MSE, deg^2
  std::vector<double> val_trace;   // per-epoch validation MSE, deg^2
  double best_val_mse = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  nlohmann::json meta;
};

/// Minimizes MSE on normalized angles with Adam over shuffled mini-batches
/// (batchnorm needs at least two samples, so a trailing batch of one is
/// folded away by the shuffle size or skipped). The checkpoint kept in `net`
/// is the best-validation-MSE epoch, including its running statistics.
inline PathTrainResult train_pathnet(PathNet& net, const Dataset& ds, const PathTrainConfig& cfg,
                                     std::uint64_t seed) {
  std::vector<std::int64_t> fit, val;
  holdout_split(ds.train_ids, cfg.val_fraction, 0x9A2, fit, val);
  if (fit.empty()) throw UsageError("train_pathnet: empty training set");
  if (val.empty()) val = fit;  // tiny corpora: validate in-sample
  if (cfg.batch_size < 2) throw ConfigError("train_pathnet: batch_size must be >= 2");
  if (cfg.epochs < 1) throw ConfigError("train_pathnet: epochs must be >= 1");

  net.init(seed);
  AdamState<double> adam = AdamState<double>::init(net.params);
  RandomStream order_rng(RandomStream::derive(seed, 0x0DE2));
  RandomStream drop_rng(RandomStream::derive(seed, 0xD20));

  PathTrainResult res;
  std::vector<Tensor<double>> best = net.snapshot();
  constexpr double kDenorm = PathVector::kNormScale * PathVector::kNormScale;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(fit);
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start < fit.size(); start += cfg.batch_size) {
      const Index b = static_cast<Index>(
          std::min<std::size_t>(fit.size() - start, static_cast<std::size_t>(cfg.batch_size)));
      if (b < 2) continue;  // batchnorm cannot train on a single sample

      Tensor<double> x({b, kRasterChannels, kRasterSize, kRasterSize});
      Tensor<double> target({b, 10});
      constexpr Index image = kRasterChannels * kRasterSize * kRasterSize;
      for (Index i = 0; i < b; ++i) {
        const Scene& scene = ds.scene(fit[start + static_cast<std::size_t>(i)]);
        const Tensor<double> in = raster_input(rasterize(scene));
        x.array().segment(i * image, image) = in.array();
        const auto n = scene.gt_path.normalized();
        for (Index j = 0; j < 10; ++j) target[i * 10 + j] = n[static_cast<std::size_t>(j)];
      }

      Tape<double> t;
      Var pred = net.forward(t, t.leaf(std::move(x)), /*training=*/true, drop_rng);
      Var loss = mse_loss(t, pred, target);
      net.params.zero_grad();
      t.backward(loss);
      adam_step(cfg.adam, adam, net.params);
      epoch_loss += t.value(loss)[0];
      ++epoch_steps;
    }
    if (epoch_steps == 0) throw UsageError("train_pathnet: no trainable batch (need >= 2 scenes)");
    res.loss_trace.push_back(kDenorm * epoch_loss / epoch_steps);

    // Ties go to the later epoch: its running statistics saw more batches.
    const double val_mse = path_mse(net, ds, val);
    res.val_trace.push_back(val_mse);
    if (val_mse <= res.best_val_mse || res.best_epoch < 0) {
      res.best_val_mse = val_mse;
      res.best_epoch = epoch;
      best = net.snapshot();
    }
  }

  net.restore(best);
  res.meta = {{"arch", kPathNetArch},
              {"context_dim", kContextDim},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"lr", cfg.adam.lr},
              {"seed", seed},
              {"best_epoch", res.best_epoch},
              {"best_val_mse", res.best_val_mse},
              {"fit_scenes", fit.size()},
              {"val_scenes", val.size()}};
  return res;
}

}  // namespace icare
