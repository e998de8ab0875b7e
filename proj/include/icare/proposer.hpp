#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "icare/checkpoint.hpp"
#include "icare/ops.hpp"
#include "icare/optim.hpp"
#include "icare/scenegen.hpp"
#include "icare/tape.hpp"

namespace icare {

inline constexpr Index kFeatStride = 4;
inline constexpr Index kFeatSize = kRasterSize / kFeatStride;  // 24
inline constexpr Index kAnchorsPerCell = 9;
inline constexpr Index kAnchorCount = kAnchorsPerCell * kFeatSize * kFeatSize;
inline constexpr Index kBackboneChannels = 32;
inline constexpr Index kRoiPoolSize = 4;
inline constexpr Index kAppearanceDim = kBackboneChannels * kRoiPoolSize * kRoiPoolSize;

/// Anchor k = 3*scale_idx + ratio_idx at each feature cell, centered on the
/// cell center in raster px, clipped to the raster. Flat layout matches the
/// head channels: index = (k*24 + row)*24 + col.
inline const std::vector<Box>& anchor_grid() {
  static const std::vector<Box> grid = [] {
    constexpr double scales[3] = {4.0, 8.0, 16.0};
    constexpr double ratios[3] = {0.5, 1.0, 2.0};  // h/w
    std::vector<Box> g;
    g.reserve(static_cast<std::size_t>(kAnchorCount));
    for (Index k = 0; k < kAnchorsPerCell; ++k) {
      const double s = scales[k / 3];
      const double r = ratios[k % 3];
      const double w = s / std::sqrt(r);
      const double h = s * std::sqrt(r);
      for (Index row = 0; row < kFeatSize; ++row)
        for (Index col = 0; col < kFeatSize; ++col) {
          const double cx = static_cast<double>(col) * kFeatStride + 2.0;
          const double cy = static_cast<double>(row) * kFeatStride + 2.0;
          g.push_back(Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}.clipped(
              static_cast<double>(kRasterSize), static_cast<double>(kRasterSize)));
        }
    }
    return g;
  }();
  return grid;
}

// ---------------------------------------------------------------------------
// box parameterization
// ---------------------------------------------------------------------------

inline std::array<double, 4> encode_box(const Box& gt, const Box& anchor) {
  if (gt.width() <= 0 || gt.height() <= 0 || anchor.width() <= 0 || anchor.height() <= 0)
    throw UsageError("encode_box: boxes must have positive extent");
  return {(gt.cx() - anchor.cx()) / anchor.width(), (gt.cy() - anchor.cy()) / anchor.height(),
          std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height())};
}

inline Box decode_box(const Box& anchor, const std::array<double, 4>& d, bool clip = true) {
  const double cx = d[0] * anchor.width() + anchor.cx();
  const double cy = d[1] * anchor.height() + anchor.cy();
  const double w = anchor.width() * std::exp(d[2]);
  const double h = anchor.height() * std::exp(d[3]);
  Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  if (clip) b = b.clipped(static_cast<double>(kRasterSize), static_cast<double>(kRasterSize));
  return b;
}

// ---------------------------------------------------------------------------
// anchor assignment
// ---------------------------------------------------------------------------

struct AnchorAssignment {
  std::vector<int> label;                        // 1 pos, 0 neg, -1 ignore
  std::vector<std::array<double, 4>> target;     // valid where label == 1
  std::vector<int> matched_gt;                   // best-IoU GT index, -1 if none
};

/// Positive: IoU >= 0.5 with any GT, or argmax-IoU anchor of a GT (so every
/// GT with any overlap gets a positive). Negative: max IoU < 0.3. Targets
/// regress toward the best-IoU GT. IoU ties for a GT's argmax anchor break
/// toward the closest anchor shape (smallest |log| size targets): a 2x2 GT
/// overlaps the square and both rectangular small anchors equally, and the
/// square one gives the regressor symmetric, well-conditioned targets.
inline AnchorAssignment assign_anchors(const std::vector<Box>& anchors,
                                       const std::vector<Box>& gt) {
  const std::size_t n = anchors.size(), m = gt.size();
  AnchorAssignment out;
  out.label.assign(n, 0);
  out.target.assign(n, {0, 0, 0, 0});
  out.matched_gt.assign(n, -1);

  const auto shape_penalty = [&](const Box& a, const Box& g) {
    const double wa = a.x_max - a.x_min, ha = a.y_max - a.y_min;
    const double wg = g.x_max - g.x_min, hg = g.y_max - g.y_min;
    return std::abs(std::log(wg / wa)) + std::abs(std::log(hg / ha));
  };

  std::vector<double> best_iou(n, 0.0);
  std::vector<double> gt_best_iou(m, 0.0);
  std::vector<double> gt_best_pen(m, 0.0);
  std::vector<std::size_t> gt_best_anchor(m, 0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t g = 0; g < m; ++g) {
      const double v = iou(anchors[a], gt[g]);
      if (v > best_iou[a]) {
        best_iou[a] = v;
        out.matched_gt[a] = static_cast<int>(g);
      }
      if (v > gt_best_iou[g] ||
          (v > 0.0 && v == gt_best_iou[g] && shape_penalty(anchors[a], gt[g]) < gt_best_pen[g])) {
        gt_best_iou[g] = v;
        gt_best_pen[g] = shape_penalty(anchors[a], gt[g]);
        gt_best_anchor[g] = a;
      }
    }

  for (std::size_t a = 0; a < n; ++a)
    out.label[a] = best_iou[a] >= 0.5 ? 1 : (best_iou[a] < 0.3 ? 0 : -1);
  for (std::size_t g = 0; g < m; ++g)
    if (gt_best_iou[g] > 0.0) {
      // The forcing GT owns its argmax anchor, including the regression
      // target — a small GT must not be dragged toward a larger neighbor.
      out.label[gt_best_anchor[g]] = 1;
      if (best_iou[gt_best_anchor[g]] < 0.5)
        out.matched_gt[gt_best_anchor[g]] = static_cast<int>(g);
    }

  for (std::size_t a = 0; a < n; ++a)
    if (out.label[a] == 1)
      out.target[a] = encode_box(gt[static_cast<std::size_t>(out.matched_gt[a])], anchors[a]);
  return out;
}

// ---------------------------------------------------------------------------
// network
// ---------------------------------------------------------------------------

struct Proposal {
  Box box;                     // raster px
  double objectness = 0;       // [0,1]
  Tensor<double> appearance;   // [512] RoI-pooled backbone feature
};

/// Three-conv backbone (stride 4 overall) with 1x1 objectness/delta heads.
/// Non-copyable: the ParameterSet holds pointers into the conv structs.
struct ProposerNet {
  ConvParams<double> conv1, conv2, conv3, head_obj, head_delta;
  ParameterSet<double> params;

  ProposerNet() = default;
  ProposerNet(const ProposerNet&) = delete;
  ProposerNet& operator=(const ProposerNet&) = delete;

  void init(std::uint64_t seed) {
    RandomStream rng(RandomStream::derive(seed, 0xB0B));
    conv1 = make_conv<double>("conv1", kRasterChannels, 16, 3, 3, 2, 1, rng);
    conv2 = make_conv<double>("conv2", 16, 32, 3, 3, 2, 1, rng);
    conv3 = make_conv<double>("conv3", 32, 32, 3, 3, 1, 1, rng);
    head_obj = make_conv<double>("head_obj", 32, kAnchorsPerCell, 1, 1, 1, 0, rng);
    head_delta = make_conv<double>("head_delta", 32, 4 * kAnchorsPerCell, 1, 1, 1, 0, rng);
    // Zero-init heads so decode starts at the identity, with the objectness
    // bias at a low prior (sigmoid(-4.6) ~ 0.01): background anchors vastly
    // outnumber positives, so starting them "off" focuses early updates on
    // the rare positive anchors instead of unlearning init noise.
    head_obj.kernel.value.set_zero();
    head_obj.bias.value.fill(-4.6);
    head_delta.kernel.value.set_zero();
    head_delta.bias.value.set_zero();
    params = ParameterSet<double>();
    for (ConvParams<double>* c : {&conv1, &conv2, &conv3, &head_obj, &head_delta}) {
      params.add(c->kernel);
      params.add(c->bias);
    }
  }

  Var backbone(Tape<double>& t, Var x) {
    Var h = relu_forward(t, conv2d_forward(t, conv1, x));
    h = relu_forward(t, conv2d_forward(t, conv2, h));
    return relu_forward(t, conv2d_forward(t, conv3, h));
  }

  std::pair<Var, Var> heads(Tape<double>& t, Var feat) {
    return {conv2d_forward(t, head_obj, feat), conv2d_forward(t, head_delta, feat)};
  }

  std::vector<Tensor<double>> snapshot() const {
    std::vector<Tensor<double>> s;
    for (auto* p : params.all()) s.push_back(p->value);
    return s;
  }
  void restore(const std::vector<Tensor<double>>& s) {
    if (s.size() != params.count()) throw UsageError("ProposerNet::restore: snapshot mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) params.all()[i]->value = s[i];
  }
};

inline constexpr const char* kProposerArch =
    "conv7-16s2p1/relu,conv16-32s2p1/relu,conv32-32s1p1/relu;heads1x1 obj9 delta36;"
    "anchors s{4,8,16} r{0.5,1,2} stride4";

inline void save_proposer(const std::string& path, const ProposerNet& net, nlohmann::json meta,
                          const AdamState<double>* adam = nullptr) {
  meta["arch"] = kProposerArch;
  save_checkpoint(path, meta, net.params, BufferList<double>{}, adam);
}

inline nlohmann::json load_proposer(const std::string& path, ProposerNet& net) {
  if (net.params.count() == 0) net.init(0);
  return load_checkpoint(path, net.params, BufferList<double>{});
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

namespace detail {

inline double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor<double> roi_appearance(const Tensor<double>& feat4, const Box& raster_box) {
  // feat4 is [1,32,24,24]; RoI boxes arrive in raster px (stride 4).
  Tensor<double> map = feat4.reshaped({kBackboneChannels, kFeatSize, kFeatSize});
  const Box scaled{raster_box.x_min / kFeatStride, raster_box.y_min / kFeatStride,
                   raster_box.x_max / kFeatStride, raster_box.y_max / kFeatStride};
  return roi_pool_with_argmax(map, scaled, kRoiPoolSize).reshaped({kAppearanceDim});
}

/// Translate a [1,C,H,W] input by (dx,dy) pixels, zero-filling the exposed
/// border (training-time phase augmentation).
inline Tensor<double> shift_input(const Tensor<double>& x, int dx, int dy) {
  if (dx == 0 && dy == 0) return x;
  const Index C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  Tensor<double> out(x.shape());
  out.set_zero();
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y) {
      const Index sy = y - dy;
      if (sy < 0 || sy >= H) continue;
      for (Index xx = 0; xx < W; ++xx) {
        const Index sx = xx - dx;
        if (sx < 0 || sx >= W) continue;
        out[(c * H + y) * W + xx] = x[(c * H + sy) * W + sx];
      }
    }
  return out;
}

}  // namespace detail

/// Proposer input is the shared scaled raster view (see raster_input).
inline Tensor<double> proposer_input(const Raster& raster) { return raster_input(raster); }

/// Decode every anchor, run NMS (IoU 0.7 by default), keep survivors at or
/// above the confidence threshold, cap at max_out, and attach RoI appearance.
inline std::vector<Proposal> propose(ProposerNet& net, const Raster& raster,
                                     double nms_iou = 0.7, double conf_threshold = 0.5,
                                     std::size_t max_out = 20) {
  if (nms_iou < 0 || nms_iou > 1) throw UsageError("propose: nms_iou must lie in [0,1]");
  Tape<double> t;
  Var x = t.leaf(proposer_input(raster));
  Var feat = net.backbone(t, x);
  auto [obj, delta] = net.heads(t, feat);
  const Tensor<double>& ov = t.value(obj);      // [1,9,24,24]
  const Tensor<double>& dv = t.value(delta);    // [1,36,24,24]
  const auto& anchors = anchor_grid();

  std::vector<double> prob(static_cast<std::size_t>(kAnchorCount));
  std::vector<Box> boxes(static_cast<std::size_t>(kAnchorCount));
  constexpr Index cells = kFeatSize * kFeatSize;
  for (Index a = 0; a < kAnchorCount; ++a) {
    const Index k = a / cells, cell = a % cells;
    prob[static_cast<std::size_t>(a)] = detail::stable_sigmoid(ov[a]);
    const std::array<double, 4> d{dv[(4 * k + 0) * cells + cell], dv[(4 * k + 1) * cells + cell],
                                  dv[(4 * k + 2) * cells + cell], dv[(4 * k + 3) * cells + cell]};
    boxes[static_cast<std::size_t>(a)] = decode_box(anchors[static_cast<std::size_t>(a)], d);
  }

  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (prob[i] != prob[j]) return prob[i] > prob[j];
    return i < j;
  });

  // Greedy NMS over all decoded boxes, stopping once max_out confident
  // survivors exist (later survivors could not displace any of them).
  std::vector<std::size_t> kept;
  std::vector<Proposal> out;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : kept)
      if (iou(boxes[idx], boxes[k]) > nms_iou) {
        suppressed = true;
        break;
      }
    if (suppressed) continue;
    kept.push_back(idx);
    if (prob[idx] >= conf_threshold) {
      Proposal p;
      p.box = boxes[idx];
      p.objectness = prob[idx];
      p.appearance = detail::roi_appearance(t.value(feat), boxes[idx]);
      out.push_back(std::move(p));
      if (out.size() >= max_out) break;
    }
  }
  return out;
}

/// Stage-2 isolation mode: one proposal per rasterized user in id order with
/// objectness pinned to 1 and appearance pooled from the given backbone.
inline std::vector<Proposal> oracle_proposals(ProposerNet& net, const Raster& raster) {
  std::vector<Proposal> out;
  if (raster.user_boxes.empty()) return out;
  Tape<double> t;
  Var x = t.leaf(proposer_input(raster));
  Var feat = net.backbone(t, x);
  for (const auto& ub : raster.user_boxes) {
    Proposal p;
    p.box = ub.box;
    p.objectness = 1.0;
    p.appearance = detail::roi_appearance(t.value(feat), ub.box);
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct ProposerTrainConfig {
  int epochs = 5;
  AdamConfig adam{0.005, 0.9, 0.99, 1e-8};
  double lr_late = 0.0003;      // lr after the decay point
  double decay_at = 0.5;        // fraction of epochs run at the full lr
  int steps_per_scene = 10;     // sampled optimizer steps per scene visit
  int max_sampled = 64;         // per-step anchor sample, 1:1 pos:neg
  double val_fraction = 0.15;   // held out from the training manifest
};

struct ProposerTrainResult {
  std::vector<double> loss_trace;
  std::vector<double> val_recall_trace;  // one entry per epoch
  double best_val_recall = 0.0;
  int best_epoch = -1;
  nlohmann::json meta;
};

inline std::vector<Box> important_gt_boxes(const Scene& scene, const Raster& raster,
                                           bool alt_annotator = false) {
  std::vector<Box> gt;
  for (const auto& ub : raster.user_boxes) {
    const RoadUser& u = scene.users[static_cast<std::size_t>(ub.user_index)];
    if (alt_annotator ? u.important_alt : u.important) gt.push_back(ub.box);
  }
  return gt;
}

/// RoI appearance features from the backbone for externally supplied boxes
/// (raster px): one backbone pass, one RoI pool per box. Lets oracle-proposal
/// pipelines reuse the appearance pathway that propose() gives its own boxes.
inline std::vector<Tensor<double>> appearance_features(ProposerNet& net, const Raster& raster,
                                                       const std::vector<Box>& boxes) {
  Tape<double> t;
  Var feat = net.backbone(t, t.leaf(proposer_input(raster)));
  const Tensor<double>& fv = t.value(feat);
  std::vector<Tensor<double>> out;
  out.reserve(boxes.size());
  for (const Box& b : boxes) out.push_back(detail::roi_appearance(fv, b));
  return out;
}

/// Fraction of important GT boxes covered (IoU >= iou_thr) by any of the
/// top proposals at confidence 0.
inline double proposal_recall(ProposerNet& net, const Dataset& ds,
                              const std::vector<std::int64_t>& ids, double iou_thr = 0.5,
                              std::size_t max_out = 20) {
  std::int64_t covered = 0, total = 0;
  for (std::int64_t id : ids) {
    const Scene& scene = ds.scene(id);
    const Raster raster = rasterize(scene);
    const auto gt = important_gt_boxes(scene, raster);
    if (gt.empty()) continue;
    const auto props = propose(net, raster, 0.7, 0.0, max_out);
    for (const Box& g : gt) {
      ++total;
      for (const Proposal& p : props)
        if (iou(p.box, g) >= iou_thr) {
          ++covered;
          break;
        }
    }
  }
  if (total == 0) throw UsageError("proposal_recall: no important ground truth in id set");
  return static_cast<double>(covered) / static_cast<double>(total);
}

inline ProposerTrainResult train_proposer(ProposerNet& net, const Dataset& ds,
                                          const ProposerTrainConfig& cfg, std::uint64_t seed) {
  std::vector<std::int64_t> fit, val;
  holdout_split(ds.train_ids, cfg.val_fraction, 0x9A1, fit, val);
  if (fit.empty()) throw UsageError("train_proposer: empty training set");
  if (val.empty()) val = fit;  // tiny corpora: validate in-sample

  net.init(seed);
  AdamState<double> adam = AdamState<double>::init(net.params);
  RandomStream order_rng(RandomStream::derive(seed, 0x0DE1));
  RandomStream sample_rng(RandomStream::derive(seed, 0x5A2));

  ProposerTrainResult res;
  std::vector<Tensor<double>> best = net.snapshot();
  const LossConfig plain_bce{1.0, 1.0};
  constexpr Index cells = kFeatSize * kFeatSize;

  // Scenes whose important users include a pedestrian or cyclist get double
  // weight in the sampling plan: their boxes span very few raster cells, so
  // the box regression needs disproportionate exposure to converge.
  std::vector<std::int64_t> weighted_fit;
  for (std::int64_t id : fit) {
    weighted_fit.push_back(id);
    const Scene& scene = ds.scene(id);
    for (const RoadUser& u : scene.users)
      if (u.important && u.kind != UserKind::car) {
        weighted_fit.push_back(id);
        break;
      }
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    AdamConfig acfg = cfg.adam;
    if (epoch >= static_cast<int>(cfg.decay_at * cfg.epochs)) acfg.lr = cfg.lr_late;
    // Sampling plan: each scene appears steps_per_scene times (doubled for
    // small-user scenes), interleaved by the shuffle so repeat visits are
    // spread across the epoch.
    std::vector<std::int64_t> plan;
    for (int rep = 0; rep < cfg.steps_per_scene; ++rep)
      plan.insert(plan.end(), weighted_fit.begin(), weighted_fit.end());
    order_rng.shuffle(plan);
    for (std::int64_t id : plan) {
      const Scene& scene = ds.scene(id);
      const Raster raster = rasterize(scene);
      const auto gt = important_gt_boxes(scene, raster);
      if (gt.empty()) continue;

      // Phase augmentation: shift the window by a couple of px so the GT
      // boxes land on every anchor-grid phase, not just the ones this scene
      // happens to produce. Small boxes need the regression to generalize
      // across phases.
      const int dx = static_cast<int>(sample_rng.uniform_index(4)) - 2;
      const int dy = static_cast<int>(sample_rng.uniform_index(4)) - 2;
      std::vector<Box> shifted_gt;
      for (const Box& b : gt) {
        Box m{std::clamp(b.x_min + dx, 0.0, 96.0), std::clamp(b.y_min + dy, 0.0, 96.0),
              std::clamp(b.x_max + dx, 0.0, 96.0), std::clamp(b.y_max + dy, 0.0, 96.0)};
        if (m.x_max - m.x_min >= 1.0 && m.y_max - m.y_min >= 1.0) shifted_gt.push_back(m);
      }
      if (shifted_gt.empty()) continue;
      const auto assign = assign_anchors(anchor_grid(), shifted_gt);

      std::vector<Index> pos, neg;
      std::vector<int> gt_pos_count(shifted_gt.size(), 0);
      for (Index a = 0; a < kAnchorCount; ++a) {
        if (assign.label[static_cast<std::size_t>(a)] == 1) {
          pos.push_back(a);
          ++gt_pos_count[static_cast<std::size_t>(assign.matched_gt[static_cast<std::size_t>(a)])];
        } else if (assign.label[static_cast<std::size_t>(a)] == 0) {
          neg.push_back(a);
        }
      }
      if (pos.empty()) continue;
      // GTs matched only by their forced argmax anchor (the tiny boxes) get
      // that anchor repeated in the loss gathers, balancing per-GT gradient
      // share against large GTs that own several positive anchors.
      const auto anchor_reps = [&](Index a) {
        const int g = assign.matched_gt[static_cast<std::size_t>(a)];
        return gt_pos_count[static_cast<std::size_t>(g)] == 1 ? 3 : 1;
      };

      {
        // Forward first (values are computed eagerly) so negative sampling
        // can mine the highest-scoring background anchors of the current net.
        Tape<double> t;
        Var x = t.leaf(detail::shift_input(proposer_input(raster), dx, dy));
        Var feat = net.backbone(t, x);
        auto [obj, delta] = net.heads(t, feat);
        const Tensor<double>& scores = t.value(obj);

        sample_rng.shuffle(pos);
        sample_rng.shuffle(neg);
        const std::size_t half = static_cast<std::size_t>(cfg.max_sampled) / 2;
        if (pos.size() > half) pos.resize(half);
        std::stable_sort(neg.begin(), neg.end(),
                         [&](Index a, Index b) { return scores[a] > scores[b]; });
        if (neg.size() > pos.size()) neg.resize(pos.size());

        std::vector<Index> obj_idx;
        std::vector<double> label_vals;
        for (std::size_t i = 0; i < pos.size(); ++i)
          for (int r = 0; r < anchor_reps(pos[i]); ++r) {
            obj_idx.push_back(pos[i]);
            label_vals.push_back(1.0);
          }
        for (std::size_t i = 0; i < neg.size(); ++i) {
          obj_idx.push_back(neg[i]);
          label_vals.push_back(0.0);
        }
        Tensor<double> labels({static_cast<Index>(label_vals.size()), 1});
        for (std::size_t i = 0; i < label_vals.size(); ++i)
          labels[static_cast<Index>(i)] = label_vals[i];

        std::vector<Index> delta_idx;
        std::vector<double> target_vals;
        for (std::size_t i = 0; i < pos.size(); ++i) {
          const Index a = pos[i];
          const Index k = a / cells, cell = a % cells;
          const auto& tg = assign.target[static_cast<std::size_t>(a)];
          for (int r = 0; r < anchor_reps(a); ++r)
            for (Index j = 0; j < 4; ++j) {
              delta_idx.push_back((4 * k + j) * cells + cell);
              target_vals.push_back(tg[static_cast<std::size_t>(j)]);
            }
        }
        Tensor<double> targets({static_cast<Index>(target_vals.size()), 1});
        for (std::size_t i = 0; i < target_vals.size(); ++i)
          targets[static_cast<Index>(i)] = target_vals[i];

        Var probs = sigmoid_forward(t, gather_elements(t, obj, obj_idx));
        Var cls = weighted_bce_loss(t, plain_bce, probs, labels);
        Var reg = smooth_l1_loss(t, gather_elements(t, delta, delta_idx), targets);
        Var loss = add(t, cls, reg);

        net.params.zero_grad();
        t.backward(loss);
        adam_step(acfg, adam, net.params);
        res.loss_trace.push_back(t.value(loss)[0]);
      }
    }

    // Ties go to the later epoch: post-decay weights generalize better.
    const double recall = proposal_recall(net, ds, val);
    res.val_recall_trace.push_back(recall);
    if (recall >= res.best_val_recall || res.best_epoch < 0) {
      res.best_val_recall = recall;
      res.best_epoch = epoch;
      best = net.snapshot();
    }
  }

  net.restore(best);
  res.meta = {{"arch", kProposerArch},
              {"epochs", cfg.epochs},
              {"lr", cfg.adam.lr},
              {"lr_late", cfg.lr_late},
              {"decay_at", cfg.decay_at},
              {"seed", seed},
              {"best_epoch", res.best_epoch},
              {"best_val_recall", res.best_val_recall},
              {"fit_scenes", fit.size()},
              {"val_scenes", val.size()}};
  return res;
}

}  // namespace icare
