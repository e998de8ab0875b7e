#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "icare/pathnet.hpp"
#include "icare/proposer.hpp"

namespace icare {

/// Feature configurations of the importance classifier. A scores appearance
/// alone; B swaps the learned context for the ground-truth path; C is the
/// full model; D drops appearance entirely.
enum class AblationMode { A, B, C, D };

inline std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::A: return "A";
    case AblationMode::B: return "B";
    case AblationMode::C: return "C";
    case AblationMode::D: return "D";
  }
  throw UsageError("invalid ablation mode value");
}

inline AblationMode ablation_mode_from_string(const std::string& s) {
  if (s == "A") return AblationMode::A;
  if (s == "B") return AblationMode::B;
  if (s == "C") return AblationMode::C;
  if (s == "D") return AblationMode::D;
  throw UsageError("unknown ablation mode '" + s + "' (expected A, B, C, or D)");
}

inline constexpr Index kLocationDim = 4;
inline constexpr Index kGtPathDim = 10;

inline Index fusion_input_dim(AblationMode m, Index context_dim = kContextDim) {
  switch (m) {
    case AblationMode::A: return kAppearanceDim;
    case AblationMode::B: return kAppearanceDim + kLocationDim + kGtPathDim;
    case AblationMode::C: return kAppearanceDim + kLocationDim + context_dim;
    case AblationMode::D: return kLocationDim + kGtPathDim;
  }
  throw UsageError("invalid ablation mode value");
}

// ---------------------------------------------------------------------------
// feature bundles
// ---------------------------------------------------------------------------

/// Per-proposal features for one ablation mode. A field is present exactly
/// when the mode consumes it (empty tensor otherwise), so a mode can never
/// accidentally train on a feature it is meant to ablate.
struct FeatureBundle {
  std::int64_t scene_id = 0;
  Box box;                       // proposal box, raster px
  Tensor<double> appearance;     // [512] RoI feature, modes A/B/C
  Tensor<double> location;       // [4] normalized bottom-center/size, modes B/C/D
  Tensor<double> context;        // [context_dim] pathnet activation, mode C
  Tensor<double> gt_path_input;  // [10] normalized GT angles, modes B/D
  int label = 0;                 // annotator 1
  int label_alt = 0;             // annotator 2
};

/// Concatenation in the fixed order [appearance | location | context-or-path].
inline Tensor<double> build_feature_vector(AblationMode mode, const FeatureBundle& b) {
  const auto require = [&](const Tensor<double>& t, Index n, const char* field) {
    if (t.size() != n)
      throw UsageError("build_feature_vector: mode " + to_string(mode) + " requires field '" +
                       field + "' of length " + std::to_string(n) + ", got " +
                       std::to_string(t.size()));
  };

  std::vector<const Tensor<double>*> parts;
  if (mode != AblationMode::D) {
    require(b.appearance, kAppearanceDim, "appearance");
    parts.push_back(&b.appearance);
  }
  if (mode != AblationMode::A) {
    require(b.location, kLocationDim, "location");
    parts.push_back(&b.location);
  }
  if (mode == AblationMode::C) {
    if (b.context.empty()) throw UsageError("build_feature_vector: mode C requires field 'context'");
    parts.push_back(&b.context);
  } else if (mode != AblationMode::A) {
    require(b.gt_path_input, kGtPathDim, "gt_path_input");
    parts.push_back(&b.gt_path_input);
  }

  Index dim = 0;
  for (const auto* p : parts) dim += p->size();
  Tensor<double> out({dim});
  Index at = 0;
  for (const auto* p : parts) {
    out.array().segment(at, p->size()) = p->array();
    at += p->size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// sample construction
// ---------------------------------------------------------------------------

enum class ProposalSource { oracle, proposer };

/// One FeatureBundle per proposal, labeled 1 iff the box overlaps an
/// important GT box at IoU >= 0.5 (per annotator). Oracle proposals are the
/// painted user boxes themselves; proposer proposals come from propose() with
/// its default thresholds. Context is computed once per scene and shared.
inline std::vector<FeatureBundle> make_training_samples(const Dataset& ds,
                                                        const std::vector<std::int64_t>& ids,
                                                        ProposalSource source, AblationMode mode,
                                                        ProposerNet* proposer_net,
                                                        PathNet* path_net) {
  const bool need_appearance = mode != AblationMode::D;
  const bool need_location = mode != AblationMode::A;
  const bool need_context = mode == AblationMode::C;
  const bool need_gt_path = mode == AblationMode::B || mode == AblationMode::D;
  if (proposer_net == nullptr && (need_appearance || source == ProposalSource::proposer))
    throw UsageError("make_training_samples: mode " + to_string(mode) +
                     " needs a proposer network for appearance features");
  if (need_context && path_net == nullptr)
    throw UsageError("make_training_samples: mode C needs a path network for context features");

  std::vector<FeatureBundle> out;
  for (std::int64_t id : ids) {
    const Scene& scene = ds.scene(id);
    const Raster raster = rasterize(scene);

    std::vector<Box> boxes;
    std::vector<Tensor<double>> appearance;
    if (source == ProposalSource::oracle) {
      for (const auto& ub : raster.user_boxes) boxes.push_back(ub.box);
      if (need_appearance) appearance = appearance_features(*proposer_net, raster, boxes);
    } else {
      for (const Proposal& p : propose(*proposer_net, raster)) {
        boxes.push_back(p.box);
        appearance.push_back(p.appearance);
      }
    }
    if (boxes.empty()) continue;

    const auto gt = important_gt_boxes(scene, raster, false);
    const auto gt_alt = important_gt_boxes(scene, raster, true);
    const auto overlaps_any = [](const Box& b, const std::vector<Box>& gs) {
      for (const Box& g : gs)
        if (iou(b, g) >= 0.5) return true;
      return false;
    };

    Tensor<double> context;
    if (need_context) context = extract_context(*path_net, raster).values;
    Tensor<double> gt_path({kGtPathDim});
    if (need_gt_path) {
      const auto n = scene.gt_path.normalized();
      for (Index i = 0; i < kGtPathDim; ++i) gt_path[i] = n[static_cast<std::size_t>(i)];
    }

    for (std::size_t i = 0; i < boxes.size(); ++i) {
      FeatureBundle b;
      b.scene_id = id;
      b.box = boxes[i];
      if (need_appearance) b.appearance = appearance[i];
      if (need_location) {
        const auto loc = location_feature(boxes[i], static_cast<double>(kRasterSize),
                                          static_cast<double>(kRasterSize))
                             .normalized();
        b.location = Tensor<double>({kLocationDim});
        for (Index j = 0; j < kLocationDim; ++j) b.location[j] = loc[static_cast<std::size_t>(j)];
      }
      if (need_context) b.context = context;
      if (need_gt_path) b.gt_path_input = gt_path;
      b.label = overlaps_any(boxes[i], gt) ? 1 : 0;
      b.label_alt = overlaps_any(boxes[i], gt_alt) ? 1 : 0;
      out.push_back(std::move(b));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// network
// ---------------------------------------------------------------------------

inline constexpr const char* kFusionArch =
    "fc128/bn/relu/drop,fc128/bn/relu/drop,fc64/bn/relu,fc1/sigmoid";

/// Importance classifier head: four FC layers (128/128/64/1), batchnorm after
/// the first three, dropout after the first two, sigmoid output.
/// Non-copyable: the ParameterSet holds pointers into the layer structs.
struct FusionNet {
  DenseParams<double> fc1, fc2, fc3, fc4;
  BatchNormParams<double> bn1, bn2, bn3;
  DropoutConfig dropout{};
  ParameterSet<double> params;
  AblationMode mode = AblationMode::A;
  Index input_dim = 0;

  FusionNet() = default;
  FusionNet(const FusionNet&) = delete;
  FusionNet& operator=(const FusionNet&) = delete;

  void init(AblationMode m, std::uint64_t seed, Index context_dim = kContextDim) {
    mode = m;
    input_dim = fusion_input_dim(m, context_dim);
    RandomStream rng(RandomStream::derive(seed, 0xF05));
    fc1 = make_dense<double>("fc1", input_dim, 128, rng);
    fc2 = make_dense<double>("fc2", 128, 128, rng);
    fc3 = make_dense<double>("fc3", 128, 64, rng);
    fc4 = make_dense<double>("fc4", 64, 1, rng);
    bn1 = make_batchnorm<double>("bn1", 128);
    bn2 = make_batchnorm<double>("bn2", 128);
    bn3 = make_batchnorm<double>("bn3", 64);

    params = ParameterSet<double>();
    for (DenseParams<double>* d : {&fc1, &fc2, &fc3, &fc4}) {
      params.add(d->weight);
      params.add(d->bias);
    }
    for (BatchNormParams<double>* b : {&bn1, &bn2, &bn3}) {
      params.add(b->gamma);
      params.add(b->beta);
    }
  }

  BufferList<double> buffers() {
    BufferList<double> list;
    for (BatchNormParams<double>* b : {&bn1, &bn2, &bn3}) {
      list.emplace_back(b->gamma.name.substr(0, b->gamma.name.find('.')) + ".running_mean",
                        &b->running_mean);
      list.emplace_back(b->gamma.name.substr(0, b->gamma.name.find('.')) + ".running_var",
                        &b->running_var);
    }
    return list;
  }

  Var forward(Tape<double>& t, Var x, bool training, RandomStream& drop_rng) {
    Var h = relu_forward(t, batchnorm_forward(t, bn1, dense_forward(t, fc1, x), training));
    h = dropout_forward(t, dropout, h, training, drop_rng);
    h = relu_forward(t, batchnorm_forward(t, bn2, dense_forward(t, fc2, h), training));
    h = dropout_forward(t, dropout, h, training, drop_rng);
    h = relu_forward(t, batchnorm_forward(t, bn3, dense_forward(t, fc3, h), training));
    return sigmoid_forward(t, dense_forward(t, fc4, h));
  }

  std::vector<Tensor<double>> snapshot() {
    std::vector<Tensor<double>> s;
    for (auto* p : params.all()) s.push_back(p->value);
    for (auto& [name, buf] : buffers()) s.push_back(*buf);
    return s;
  }
  void restore(const std::vector<Tensor<double>>& s) {
    const auto bufs = buffers();
    if (s.size() != params.count() + bufs.size())
      throw UsageError("FusionNet::restore: snapshot mismatch");
    for (std::size_t i = 0; i < params.count(); ++i) params.all()[i]->value = s[i];
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].second = s[params.count() + i];
  }
};

inline void save_fusion(const std::string& path, FusionNet& net, nlohmann::json meta,
                        const AdamState<double>* adam = nullptr) {
  meta["arch"] = kFusionArch;
  meta["mode"] = to_string(net.mode);
  meta["input_dim"] = net.input_dim;
  save_checkpoint(path, meta, net.params, net.buffers(), adam);
}

inline nlohmann::json load_fusion(const std::string& path, FusionNet& net) {
  const nlohmann::json meta = peek_checkpoint_meta(path);
  if (!meta.contains("arch") || meta.at("arch").get<std::string>() != kFusionArch)
    throw UsageError("load_fusion: checkpoint " + path + " does not hold a fusion network");
  const AblationMode mode = ablation_mode_from_string(meta.at("mode").get<std::string>());
  const Index input_dim = meta.at("input_dim").get<Index>();
  if (net.params.count() != 0 && net.input_dim != input_dim)
    throw UsageError("load_fusion: checkpoint " + path + " has input dimension " +
                     std::to_string(input_dim) + ", net expects " + std::to_string(net.input_dim));
  if (mode == AblationMode::C) {
    const Index context_dim = input_dim - kAppearanceDim - kLocationDim;
    if (context_dim < 1)
      throw UsageError("load_fusion: checkpoint " + path + " records an invalid context dimension");
    net.init(mode, 0, context_dim);
  } else {
    net.init(mode, 0);
    if (net.input_dim != input_dim)
      throw UsageError("load_fusion: checkpoint " + path + " input dimension " +
                       std::to_string(input_dim) + " does not match mode " + to_string(mode));
  }
  return load_checkpoint(path, net.params, net.buffers());
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

/// Importance probability for one feature vector, inference mode.
inline double score_importance(FusionNet& net, const Tensor<double>& vec) {
  if (net.params.count() == 0)
    throw UsageError("score_importance: network has no parameters");
  if (vec.size() != net.input_dim)
    throw UsageError("score_importance: vector length " + std::to_string(vec.size()) +
                     " does not match net input " + std::to_string(net.input_dim));
  Tape<double> t;
  RandomStream unused(0);
  Var y = net.forward(t, t.leaf(vec.reshaped({1, net.input_dim})), /*training=*/false, unused);
  return t.value(y)[0];
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct FusionTrainConfig {
  int epochs = 40;
  int batch_size = 32;
  AdamConfig adam{0.01, 0.9, 0.99, 1e-8};  // reference config may pin a smaller lr
  LossConfig loss{1.0, 2.0};               // not-important : important = 1 : 2
  double val_fraction = 0.15;
};

struct FusionTrainResult {
  std::vector<double> loss_trace;    // per-epoch mean weighted BCE
  std::vector<double> val_f1_trace;  // per-epoch F1 at threshold 0.5
  double best_val_f1 = 0.0;
  int best_epoch = -1;
  nlohmann::json meta;
};

/// Classification F1 at a fixed threshold (precision 1 when nothing is
/// predicted positive, F1 0 when precision + recall is 0).
inline double classification_f1(const std::vector<int>& labels, const std::vector<double>& scores,
                                double threshold = 0.5) {
  if (labels.size() != scores.size())
    throw UsageError("classification_f1: label/score size mismatch");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i] == 1) ++tp;
    if (pred && labels[i] == 0) ++fp;
    if (!pred && labels[i] == 1) ++fn;
  }
  const double p = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double r = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

/// Weighted-BCE training over shuffled mini-batches with a scene-held-out
/// validation split; the checkpoint kept in `net` is the best-validation-F1
/// epoch (threshold 0.5), including batchnorm running statistics.
inline FusionTrainResult train_fusion(FusionNet& net, const std::vector<FeatureBundle>& samples,
                                      AblationMode mode, const FusionTrainConfig& cfg,
                                      std::uint64_t seed) {
  if (samples.empty()) throw UsageError("train_fusion: empty sample set");
  if (cfg.batch_size < 2) throw ConfigError("train_fusion: batch_size must be >= 2");
  if (cfg.epochs < 1) throw ConfigError("train_fusion: epochs must be >= 1");
  bool any_pos = false, any_neg = false;
  for (const FeatureBundle& b : samples) (b.label == 1 ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg)
    throw UsageError("train_fusion: samples contain a single class (need both labels)");

  // Feature vectors once up-front; a malformed bundle fails here, not mid-run.
  std::vector<Tensor<double>> vecs;
  vecs.reserve(samples.size());
  for (const FeatureBundle& b : samples) vecs.push_back(build_feature_vector(mode, b));
  const Index dim = vecs.front().size();

  // Hold out whole scenes: proposals of one scene share context and layout,
  // so splitting within a scene would leak validation into the fit set.
  std::vector<std::int64_t> scene_ids;
  for (const FeatureBundle& b : samples) scene_ids.push_back(b.scene_id);
  std::sort(scene_ids.begin(), scene_ids.end());
  scene_ids.erase(std::unique(scene_ids.begin(), scene_ids.end()), scene_ids.end());
  std::vector<std::int64_t> fit_scenes, val_scenes;
  holdout_split(scene_ids, cfg.val_fraction, 0x9A3, fit_scenes, val_scenes);
  const auto in = [](const std::vector<std::int64_t>& v, std::int64_t id) {
    return std::binary_search(v.begin(), v.end(), id);
  };
  std::sort(fit_scenes.begin(), fit_scenes.end());
  std::sort(val_scenes.begin(), val_scenes.end());
  std::vector<std::size_t> fit, val;
  for (std::size_t i = 0; i < samples.size(); ++i)
    (in(val_scenes, samples[i].scene_id) ? val : fit).push_back(i);
  bool val_has_pos = false;
  for (std::size_t i : val) val_has_pos = val_has_pos || samples[i].label == 1;
  bool fit_has_pos = false, fit_has_neg = false;
  for (std::size_t i : fit) (samples[i].label == 1 ? fit_has_pos : fit_has_neg) = true;
  if (fit.empty() || !fit_has_pos || !fit_has_neg || val.empty() || !val_has_pos)
    fit = val = [&] {  // tiny corpora: validate in-sample
      std::vector<std::size_t> all(samples.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      return all;
    }();

  net.init(mode, seed, mode == AblationMode::C ? dim - kAppearanceDim - kLocationDim : kContextDim);
  if (net.input_dim != dim)
    throw UsageError("train_fusion: feature dimension " + std::to_string(dim) +
                     " does not match mode " + to_string(mode));
  AdamState<double> adam = AdamState<double>::init(net.params);
  RandomStream order_rng(RandomStream::derive(seed, 0x0DE3));
  RandomStream drop_rng(RandomStream::derive(seed, 0xD21));

  FusionTrainResult res;
  std::vector<Tensor<double>> best = net.snapshot();
  std::vector<int> val_labels;
  for (std::size_t i : val) val_labels.push_back(samples[i].label);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(fit);
    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < fit.size(); start += cfg.batch_size) {
      const Index b = static_cast<Index>(
          std::min<std::size_t>(fit.size() - start, static_cast<std::size_t>(cfg.batch_size)));
      if (b < 2) continue;  // batchnorm cannot train on a single sample
      Tensor<double> x({b, dim});
      Tensor<double> y({b, 1});
      for (Index i = 0; i < b; ++i) {
        const std::size_t s = fit[start + static_cast<std::size_t>(i)];
        x.array().segment(i * dim, dim) = vecs[s].array();
        y[i] = samples[s].label;
      }
      Tape<double> t;
      Var probs = net.forward(t, t.leaf(std::move(x)), /*training=*/true, drop_rng);
      Var loss = weighted_bce_loss(t, cfg.loss, probs, y);
      net.params.zero_grad();
      t.backward(loss);
      adam_step(cfg.adam, adam, net.params);
      epoch_loss += t.value(loss)[0];
      ++steps;
    }
    if (steps == 0) throw UsageError("train_fusion: no trainable batch (need >= 2 samples)");
    res.loss_trace.push_back(epoch_loss / steps);

    std::vector<double> val_scores;
    for (std::size_t i : val) val_scores.push_back(score_importance(net, vecs[i]));
    const double f1 = classification_f1(val_labels, val_scores);
    res.val_f1_trace.push_back(f1);
    // Ties go to the later epoch: its running statistics saw more batches.
    if (f1 >= res.best_val_f1 || res.best_epoch < 0) {
      res.best_val_f1 = f1;
      res.best_epoch = epoch;
      best = net.snapshot();
    }
  }

  net.restore(best);
  res.meta = {{"arch", kFusionArch},
              {"mode", to_string(mode)},
              {"input_dim", dim},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"lr", cfg.adam.lr},
              {"loss_weights", {cfg.loss.weight_not_important, cfg.loss.weight_important}},
              {"seed", seed},
              {"best_epoch", res.best_epoch},
              {"best_val_f1", res.best_val_f1},
              {"fit_samples", fit.size()},
              {"val_samples", val.size()}};
  return res;
}

}  // namespace icare
