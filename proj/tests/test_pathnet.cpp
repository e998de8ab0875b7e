#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "icare/optim.hpp"
#include "icare/pathnet.hpp"

using namespace icare;

namespace {

/// Spearman rank correlation for small distinct-value sequences; ties broken
/// by position (sufficient for 10 monotonicity points).
double spearman_steps(const std::array<double, 10>& y) {
  std::array<int, 10> rank{};
  for (int i = 0; i < 10; ++i) {
    int r = 0;
    for (int j = 0; j < 10; ++j)
      if (y[static_cast<std::size_t>(j)] < y[static_cast<std::size_t>(i)] ||
          (y[static_cast<std::size_t>(j)] == y[static_cast<std::size_t>(i)] && j < i))
        ++r;
    rank[static_cast<std::size_t>(i)] = r;
  }
  double d2 = 0;
  for (int i = 0; i < 10; ++i) {
    const double d = rank[static_cast<std::size_t>(i)] - i;
    d2 += d * d;
  }
  return 1.0 - 6.0 * d2 / (10.0 * 99.0);
}

Raster test_raster(std::uint64_t seed) {
  GenConfig gcfg;
  return rasterize(generate_scene(seed, 1, gcfg));
}

/// One shared corpus + trained net: doctest re-enters the test case once per
/// subcase, and retraining on every entry would dominate the suite's runtime.
/// Training is deterministic, so sharing does not couple the subcases.
struct TrainedFixture {
  std::string dir;
  Dataset ds;
  PathTrainConfig cfg;
  PathNet net;
  PathTrainResult res;
};

TrainedFixture& trained_fixture() {
  static TrainedFixture* f = [] {
    auto* t = new TrainedFixture;
    namespace fs = std::filesystem;
    t->dir = (fs::temp_directory_path() / "icare_path_train").string();
    fs::remove_all(t->dir);
    GenConfig gcfg;
    t->ds = generate_dataset(400, 19, gcfg, t->dir);
    t->res = train_pathnet(t->net, t->ds, t->cfg, 5);
    return t;
  }();
  return *f;
}

}  // namespace

TEST_CASE("normalization round-trip is exact to 1e-12") {
  RandomStream rng(77);
  for (int rep = 0; rep < 100; ++rep) {
    PathVector p;
    for (double& a : p.angles) a = rng.uniform(-12.0, 12.0);
    const PathVector q = PathVector::denormalized(p.normalized());
    for (std::size_t i = 0; i < 10; ++i)
      CHECK(q.angles[i] == doctest::Approx(p.angles[i]).epsilon(1e-12));
  }
}

TEST_CASE("architecture contracts") {
  PathNet net;
  net.init(3);

  // 5 convs + 4 FCs + 6 batchnorms, each contributing two parameter tensors
  CHECK(net.params.count() == 30);
  CHECK(net.conv5.out_channels() == 8);
  CHECK(net.fc1.in_features() == kContextDim);
  CHECK(net.fc4.out_features() == 10);

  const Raster r = test_raster(11);

  SUBCASE("predict_path: 10 values, deterministic") {
    const PathVector a = predict_path(net, r);
    const PathVector b = predict_path(net, r);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(std::isfinite(a.angles[i]));
      CHECK(a.angles[i] == b.angles[i]);  // bitwise: same code path, no state
    }
  }

  SUBCASE("extract_context: 288 non-negative finite values") {
    const ContextFeature c = extract_context(net, r);
    REQUIRE(c.values.size() == kContextDim);
    for (Index i = 0; i < c.values.size(); ++i) {
      CHECK(std::isfinite(c.values[i]));
      CHECK(c.values[i] >= 0.0);
    }
  }

  SUBCASE("context equals the conv intermediate of predict_path bit-for-bit") {
    const ContextFeature c = extract_context(net, r);
    Tape<double> t;
    RandomStream unused(0);
    Var feat = net.conv_stack(t, t.leaf(raster_input(r)), false);
    const Tensor<double>& fv = t.value(feat);
    REQUIRE(fv.size() == kContextDim);
    for (Index i = 0; i < kContextDim; ++i) CHECK(c.values[i] == fv[i]);

    // and the head on that same intermediate reproduces predict_path
    Var out = net.head(t, feat, false, unused);
    const PathVector direct = predict_path(net, r);
    for (std::size_t i = 0; i < 10; ++i)
      CHECK(direct.angles[i] == t.value(out)[static_cast<Index>(i)] * PathVector::kNormScale);
  }

  SUBCASE("batched conv stack keeps the flatten contract") {
    Tensor<double> x({2, kRasterChannels, kRasterSize, kRasterSize});
    const Tensor<double> one = raster_input(r);
    x.array().segment(0, one.size()) = one.array();
    x.array().segment(one.size(), one.size()) = one.array();
    Tape<double> t;
    Var feat = net.conv_stack(t, t.leaf(std::move(x)), false);
    CHECK(t.value(feat).shape() == Shape{2, kContextDim});
  }

  SUBCASE("untrained network is a usage error") {
    PathNet fresh;
    CHECK_THROWS_AS(predict_path(fresh, r), UsageError);
    CHECK_THROWS_AS(extract_context(fresh, r), UsageError);
  }
}

TEST_CASE("gradient check, batchnorm in inference mode") {
  PathNet net;
  net.init(7);
  RandomStream rng(21);

  // Non-trivial running statistics so inference batchnorm is not an identity.
  for (BatchNormParams<double>* b : {&net.bn1, &net.bn2, &net.bn3, &net.bn4,
                                     &net.bn_fc1, &net.bn_fc2}) {
    for (Index i = 0; i < b->running_mean.size(); ++i) {
      b->running_mean[i] = rng.normal(0.0, 0.1);
      b->running_var[i] = rng.uniform(0.5, 1.5);
    }
  }

  Tensor<double> x({1, kRasterChannels, kRasterSize, kRasterSize});
  for (Index i = 0; i < x.size(); ++i) x[i] = rng.normal(0.0, 0.5);
  Tensor<double> target({1, 10});
  for (Index i = 0; i < 10; ++i) target[i] = rng.uniform(-1.0, 1.0);

  RandomStream unused(0);
  std::function<double()> loss_fn = [&]() {
    Tape<double> t;
    Var pred = net.forward(t, t.leaf(x), /*training=*/false, unused);
    Var loss = mse_loss(t, pred, target);
    net.params.zero_grad();
    t.backward(loss);
    return t.value(loss)[0];
  };
  auto report = grad_check(net.params, loss_fn, 1e-5, 6);
  INFO(report.worst_param << "[" << report.worst_index << "] rel " << report.max_rel_error);
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("training beats the constant-path baseline") {
  TrainedFixture& fx = trained_fixture();
  const Dataset& ds = fx.ds;
  const PathTrainConfig& cfg = fx.cfg;
  PathNet& net = fx.net;
  const PathTrainResult& res = fx.res;
  const std::string& dir = fx.dir;

  REQUIRE(res.loss_trace.size() == static_cast<std::size_t>(cfg.epochs));
  REQUIRE(res.val_trace.size() == static_cast<std::size_t>(cfg.epochs));
  for (double l : res.loss_trace) CHECK(std::isfinite(l));
  for (double v : res.val_trace) CHECK(std::isfinite(v));

  SUBCASE("checkpoint selection tracks the best validation MSE") {
    CHECK(res.best_val_mse == *std::min_element(res.val_trace.begin(), res.val_trace.end()));
    CHECK(res.val_trace[static_cast<std::size_t>(res.best_epoch)] == res.best_val_mse);
    double running = res.val_trace[0];
    for (double v : res.val_trace) {
      running = std::min(running, v);
      CHECK(running <= res.val_trace[0]);
    }
    // the restored net reproduces the recorded best validation MSE
    std::vector<std::int64_t> fit, val;
    holdout_split(ds.train_ids, cfg.val_fraction, 0x9A2, fit, val);
    CHECK(path_mse(net, ds, val) == doctest::Approx(res.best_val_mse).epsilon(1e-12));
  }

  SUBCASE("test MSE is at most half the constant mean-path predictor's") {
    std::array<double, 10> mean_path{};
    for (std::int64_t id : ds.train_ids)
      for (std::size_t i = 0; i < 10; ++i) mean_path[i] += ds.scene(id).gt_path.angles[i];
    for (double& m : mean_path) m /= static_cast<double>(ds.train_ids.size());
    double baseline = 0.0;
    for (std::int64_t id : ds.test_ids)
      for (std::size_t i = 0; i < 10; ++i) {
        const double e = mean_path[i] - ds.scene(id).gt_path.angles[i];
        baseline += e * e;
      }
    baseline /= 10.0 * static_cast<double>(ds.test_ids.size());

    const double test_mse = path_mse(net, ds, ds.test_ids);
    INFO("test " << test_mse << " baseline " << baseline);
    CHECK(test_mse <= 0.5 * baseline);
  }

  SUBCASE("straight scenes predict smaller angles than turn scenes") {
    double straight = 0.0, turn = 0.0;
    int n_straight = 0, n_turn = 0;
    for (std::int64_t id : ds.test_ids) {
      const Scene& scene = ds.scene(id);
      const PathVector p = predict_path(net, rasterize(scene));
      double mean_abs = 0.0;
      for (double a : p.angles) mean_abs += std::abs(a);
      mean_abs /= 10.0;
      if (scene.ego.intent == Intent::straight) {
        straight += mean_abs;
        ++n_straight;
      } else {
        turn += mean_abs;
        ++n_turn;
      }
    }
    REQUIRE(n_straight > 0);
    REQUIRE(n_turn > 0);
    CHECK(straight / n_straight < turn / n_turn);
  }

  SUBCASE("per-step error grows with the step index") {
    const auto err = path_error_by_step(net, ds, ds.test_ids);
    for (double e : err) CHECK(std::isfinite(e));
    CHECK(err[9] >= err[0]);
    CHECK(spearman_steps(err) > 0.0);
  }

  SUBCASE("left and right intent contexts differ under an identical user layout") {
    Scene left, right;
    bool has_left = false, has_right = false;
    for (std::int64_t id : ds.test_ids) {
      const Scene& scene = ds.scene(id);
      if (!has_left && scene.ego.intent == Intent::left) {
        left = scene;
        has_left = true;
      }
      if (!has_right && scene.ego.intent == Intent::right) {
        right = scene;
        has_right = true;
      }
    }
    REQUIRE(has_left);
    REQUIRE(has_right);
    left.users = right.users;
    const ContextFeature a = extract_context(net, rasterize(left));
    const ContextFeature b = extract_context(net, rasterize(right));
    double l2 = 0.0;
    for (Index i = 0; i < kContextDim; ++i) {
      const double d = a.values[i] - b.values[i];
      l2 += d * d;
    }
    CHECK(std::sqrt(l2) > 0.0);
  }

  SUBCASE("checkpoint round-trip reproduces predictions bitwise") {
    const std::string ckpt = dir + "/pathnet.icre";
    save_pathnet(ckpt, net, {{"note", "test"}});

    PathNet loaded;
    const nlohmann::json meta = load_pathnet(ckpt, loaded);
    CHECK(meta.at("arch").get<std::string>() == kPathNetArch);
    CHECK(meta.at("context_dim").get<Index>() == kContextDim);
    CHECK(meta.at("note").get<std::string>() == "test");

    const Raster r = rasterize(ds.scene(ds.test_ids.front()));
    const PathVector a = predict_path(net, r);
    const PathVector b = predict_path(loaded, r);
    for (std::size_t i = 0; i < 10; ++i) CHECK(a.angles[i] == b.angles[i]);
    const ContextFeature ca = extract_context(net, r);
    const ContextFeature cb = extract_context(loaded, r);
    for (Index i = 0; i < kContextDim; ++i) CHECK(ca.values[i] == cb.values[i]);
  }

  SUBCASE("foreign checkpoints are a usage error") {
    const std::string other = dir + "/other.icre";
    save_checkpoint(other, {{"arch", "something-else"}}, net.params, net.buffers());
    PathNet victim;
    CHECK_THROWS_AS(load_pathnet(other, victim), UsageError);
  }

}

TEST_CASE("same seed retrains identically, different seed differs") {
  const Dataset& ds = trained_fixture().ds;
  PathTrainConfig tiny = trained_fixture().cfg;
  tiny.epochs = 3;
  PathNet n1, n2, n3;
  const PathTrainResult r1 = train_pathnet(n1, ds, tiny, 9);
  const PathTrainResult r2 = train_pathnet(n2, ds, tiny, 9);
  CHECK(r1.loss_trace == r2.loss_trace);
  CHECK(r1.val_trace == r2.val_trace);
  const PathTrainResult r3 = train_pathnet(n3, ds, tiny, 10);
  CHECK(r1.loss_trace != r3.loss_trace);
}

TEST_CASE("training error contracts") {
  Dataset empty;
  PathNet net;
  PathTrainConfig cfg;
  CHECK_THROWS_AS(train_pathnet(net, empty, cfg, 1), UsageError);

  GenConfig gcfg;
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "icare_path_err").string();
  fs::remove_all(dir);
  Dataset ds = generate_dataset(12, 3, gcfg, dir);

  PathTrainConfig bad = cfg;
  bad.batch_size = 1;
  CHECK_THROWS_AS(train_pathnet(net, ds, bad, 1), ConfigError);
  bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(train_pathnet(net, ds, bad, 1), ConfigError);

  PathNet trained;
  trained.init(1);
  CHECK_THROWS_AS(path_mse(trained, ds, {}), UsageError);
  CHECK_THROWS_AS(path_error_by_step(trained, ds, {}), UsageError);
}
