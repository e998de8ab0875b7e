#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "icare/digest.hpp"
#include "icare/scenegen.hpp"

using namespace icare;

namespace {

Scene basic_scene(double ego_x, double ego_y, double speed, Intent intent) {
  Scene s;
  s.id = 1;
  s.ego = EgoState{ego_x, ego_y, kPi / 2, speed, intent};
  return s;
}

RoadUser user_at(UserKind kind, double x, double y, double heading, double speed) {
  RoadUser u;
  u.kind = kind;
  u.x = x;
  u.y = y;
  u.heading = heading;
  u.speed = speed;
  const auto fp = kind_footprint(kind);
  u.length = fp.first;
  u.width = fp.second;
  return u;
}

// independent re-computation of the oracle's distance minimum
double min_sampled_distance(const Scene& s, const RoadUser& u) {
  double x = s.ego.x, y = s.ego.y, h = s.ego.heading;
  double best = std::hypot(u.x - x, u.y - y);
  for (int k = 1; k <= 10; ++k) {
    h += s.gt_path.angles[static_cast<std::size_t>(k - 1)] * kPi / 180.0;
    x += std::cos(h);
    y += std::sin(h);
    const double t = k / s.ego.speed;
    best = std::min(best, std::hypot(u.x + u.speed * std::cos(u.heading) * t - x,
                                     u.y + u.speed * std::sin(u.heading) * t - y));
  }
  return best;
}

double cell(const Raster& r, Index ch, Index row, Index col) {
  return r.channels[(ch * kRasterSize + row) * kRasterSize + col];
}

}  // namespace

TEST_CASE("arc path examples") {
  std::array<double, 10> zero{};

  PathVector straight = detail::arc_path(0, 0.0, zero);
  for (double a : straight.angles) CHECK(a == 0.0);

  // left turn, radius 10, arc from the first step
  PathVector left = detail::arc_path(0, (180.0 / kPi) / 10.0, zero);
  for (double a : left.angles) {
    CHECK(a == doctest::Approx(5.7296).epsilon(1e-4));
    CHECK(a == doctest::Approx(18.0 / kPi).epsilon(1e-12));
  }

  PathVector right = detail::arc_path(0, -(180.0 / kPi) / 10.0, zero);
  for (std::size_t i = 0; i < 10; ++i) CHECK(right.angles[i] == -left.angles[i]);

  // straight prefix then arc
  PathVector mid = detail::arc_path(4, 6.0, zero);
  for (std::size_t i = 0; i < 4; ++i) CHECK(mid.angles[i] == 0.0);
  for (std::size_t i = 4; i < 10; ++i) CHECK(mid.angles[i] == 6.0);

  // jitter offsets and the clamp
  std::array<double, 10> jit{};
  jit[0] = 0.25;
  jit[9] = 99.0;
  PathVector j = detail::arc_path(0, 1.0, jit);
  CHECK(j.angles[0] == doctest::Approx(1.25));
  CHECK(j.angles[9] == 12.0);
}

TEST_CASE("ego_path_ground_truth intents") {
  WorldLayout world;

  EgoState ego{1.75, -20.0, kPi / 2, 6.0, Intent::straight};
  RandomStream rng(42);
  PathVector p = ego_path_ground_truth(ego, world, rng);
  for (double a : p.angles) CHECK(std::abs(a) <= 1.8);  // jitter only, sigma 0.3

  ego.intent = Intent::left;
  ego.y = -24.0;  // 15 m to entry: all ten steps stay straight
  RandomStream rng2(43);
  PathVector far = ego_path_ground_truth(ego, world, rng2);
  for (double a : far.angles) CHECK(std::abs(a) <= 1.8);

  ego.y = -9.0;  // at the entry: arc from step 1
  RandomStream rng3(44);
  PathVector arc = ego_path_ground_truth(ego, world, rng3);
  double mean = 0;
  for (double a : arc.angles) mean += a / 10.0;
  CHECK(mean > 3.0);  // (180/pi)/12 = 4.77 minimum arc rate, minus jitter noise
  for (double a : arc.angles) CHECK(std::abs(a) <= 12.0);

  ego.intent = Intent::right;
  RandomStream rng4(44);
  PathVector rightp = ego_path_ground_truth(ego, world, rng4);
  double rmean = 0;
  for (double a : rightp.angles) rmean += a / 10.0;
  CHECK(rmean < -3.0);
}

TEST_CASE("unroll_path examples") {
  EgoState ego{3.0, -15.0, kPi / 2, 6.0, Intent::straight};
  PathVector zero;

  auto pts = unroll_path(ego, zero);
  REQUIRE(pts.size() == 11);
  for (int i = 0; i <= 10; ++i) {
    CHECK(pts[static_cast<std::size_t>(i)].x == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(pts[static_cast<std::size_t>(i)].y == doctest::Approx(-15.0 + i).epsilon(1e-12));
  }

  // constant +90 deg per step traces a period-4 lattice loop
  PathVector quarter;
  quarter.angles.fill(90.0);
  auto loop = unroll_path(ego, quarter);
  for (std::size_t i = 0; i + 4 < loop.size(); ++i) {
    CHECK(loop[i].x == doctest::Approx(loop[i + 4].x).epsilon(1e-9));
    CHECK(loop[i].y == doctest::Approx(loop[i + 4].y).epsilon(1e-9));
  }

  // net heading change accumulates to the angle sum
  PathVector arcp;
  double sum = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    arcp.angles[i] = 1.3 * static_cast<double>(i) - 4.0;
    sum += arcp.angles[i];
  }
  auto trace = unroll_path(ego, arcp);
  const double last_dx = trace[10].x - trace[9].x;
  const double last_dy = trace[10].y - trace[9].y;
  const double final_heading = std::atan2(last_dy, last_dx);
  const double expected = ego.heading + sum * kPi / 180.0;
  CHECK(std::abs(std::remainder(final_heading - expected, 2 * kPi)) < 1e-9);
}

TEST_CASE("importance_oracle examples") {
  OracleConfig cfg;

  SUBCASE("stationary pedestrian ahead on a straight path is important") {
    Scene s = basic_scene(1.75, -15.0, 6.0, Intent::straight);
    s.users.push_back(user_at(UserKind::pedestrian, 1.75, -10.0, 0.0, 0.0));
    auto res = importance_oracle(s, cfg);
    REQUIRE(res.size() == 1);
    CHECK(res[0].important);
    CHECK(res[0].min_dist == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("car 20 m behind moving away is not important") {
    Scene s = basic_scene(1.75, -15.0, 6.0, Intent::straight);
    s.users.push_back(user_at(UserKind::car, 1.75, -35.0, -kPi / 2, 5.0));
    auto res = importance_oracle(s, cfg);
    REQUIRE(res.size() == 1);
    CHECK_FALSE(res[0].important);
    CHECK(res[0].min_dist == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(res[0].min_dist == doctest::Approx(min_sampled_distance(s, s.users[0])).epsilon(1e-12));
  }

  SUBCASE("oncoming car matters for a left turn but not for straight") {
    // Same southbound car; the left-turn arc carries the ego into its lane
    // just as it arrives, the straight ego passes a road-width away.
    RoadUser car = user_at(UserKind::car, -1.75, 9.0, -kPi / 2, 5.0);

    Scene left = basic_scene(0.95, -12.0, 6.0, Intent::left);
    left.gt_path.angles = {0, 0, 0, 7, 7, 7, 7, 7, 7, 7};
    left.users.push_back(car);
    auto rl = importance_oracle(left, cfg);
    CHECK(rl[0].important);
    CHECK(rl[0].min_dist == doctest::Approx(3.7014).epsilon(1e-3));
    CHECK(rl[0].min_dist == doctest::Approx(min_sampled_distance(left, car)).epsilon(1e-12));

    Scene straight = basic_scene(1.75, -12.0, 6.0, Intent::straight);
    straight.users.push_back(car);
    auto rs = importance_oracle(straight, cfg);
    CHECK_FALSE(rs[0].important);
    CHECK(rs[0].min_dist == doctest::Approx(4.4000).epsilon(1e-3));
    CHECK(rs[0].min_dist == doctest::Approx(min_sampled_distance(straight, car)).epsilon(1e-12));
  }

  SUBCASE("stationary corridor rule needs the corridor, distance rule needs r_safe") {
    Scene s = basic_scene(1.75, -15.0, 6.0, Intent::straight);
    s.users.push_back(user_at(UserKind::car, 3.05, -8.0, kPi / 2, 0.0));   // 1.3 m off path
    s.users.push_back(user_at(UserKind::car, 7.25, -8.0, kPi / 2, 0.0));   // 5.5 m off path
    auto res = importance_oracle(s, cfg);
    CHECK(res[0].important);        // inside corridor (and inside r_safe)
    CHECK_FALSE(res[1].important);  // outside both
  }

  SUBCASE("increasing r_safe only adds importance") {
    GenConfig gen;
    for (std::int64_t id = 0; id < 100; ++id) {
      Scene s = generate_scene(99, id, gen);
      OracleConfig wide = gen.oracle;
      wide.r_safe = 5.5;
      auto base = importance_oracle(s, gen.oracle);
      auto grown = importance_oracle(s, wide);
      for (std::size_t i = 0; i < base.size(); ++i)
        if (base[i].important) CHECK(grown[i].important);
    }
  }

  SUBCASE("zero ego speed is rejected") {
    Scene s = basic_scene(1.75, -15.0, 0.0, Intent::straight);
    CHECK_THROWS_AS(importance_oracle(s, cfg), UsageError);
  }
}

TEST_CASE("perturb_annotations thresholds and flips") {
  GenConfig cfg;

  SUBCASE("min distance 3.5 splits the annotators") {
    Scene s = basic_scene(1.75, -15.0, 6.0, Intent::straight);
    s.users.push_back(user_at(UserKind::car, 5.25, -5.0, kPi / 2, 0.0));  // passes at 3.5 m
    auto res = importance_oracle(s, cfg.oracle);
    REQUIRE(res.size() == 1);
    CHECK(res[0].important);  // annotator 1: 3.5 <= 4.0
    CHECK(res[0].min_dist == doctest::Approx(3.5).epsilon(1e-12));

    GenConfig noflip = cfg;
    noflip.oracle.flip_prob = 0.0;
    auto alt = perturb_annotations(s, noflip, 5);
    CHECK_FALSE(alt[0]);  // annotator 2: 3.5 > 3.0, no flip

    GenConfig always = cfg;
    always.oracle.flip_prob = 1.0;  // |3.5 - 3.0| <= band, so the flip applies
    auto flipped = perturb_annotations(s, always, 5);
    CHECK(flipped[0]);
  }

  SUBCASE("labels far outside the band never flip") {
    Scene s = basic_scene(1.75, -15.0, 6.0, Intent::straight);
    s.users.push_back(user_at(UserKind::car, 1.75, -35.0, -kPi / 2, 5.0));      // min 20 m
    s.users.push_back(user_at(UserKind::pedestrian, 1.75, -10.0, 0.0, 0.0));    // min 0 m
    GenConfig always = cfg;
    always.oracle.flip_prob = 1.0;
    auto alt = perturb_annotations(s, always, 5);
    CHECK_FALSE(alt[0]);
    CHECK(alt[1]);
  }

  SUBCASE("flips are deterministic in (seed, scene_id)") {
    GenConfig gen;
    for (std::int64_t id = 0; id < 20; ++id) {
      Scene s = generate_scene(7, id, gen);
      CHECK(perturb_annotations(s, gen, 7) == perturb_annotations(s, gen, 7));
    }
  }
}

TEST_CASE("generate_scene determinism and invariants") {
  GenConfig cfg;

  SUBCASE("same (seed, scene_id) twice is byte-identical") {
    for (std::int64_t id : {0, 1, 17, 999}) {
      Scene a = generate_scene(11, id, cfg);
      Scene b = generate_scene(11, id, cfg);
      CHECK(scene_to_json(a).dump() == scene_to_json(b).dump());
    }
    CHECK(scene_to_json(generate_scene(11, 3, cfg)).dump() !=
          scene_to_json(generate_scene(12, 3, cfg)).dump());
  }

  SUBCASE("zero-user config still yields a valid path") {
    GenConfig none = cfg;
    none.max_users = 0;
    Scene s = generate_scene(5, 123, none);
    CHECK(s.users.empty());
    for (double a : s.gt_path.angles) CHECK(std::abs(a) <= 12.0);
  }

  SUBCASE("scene invariants hold across a sweep") {
    for (std::int64_t id = 0; id < 200; ++id) {
      Scene s = generate_scene(31, id, cfg);
      CHECK(s.id == id);
      CHECK(s.ego.speed >= 2.0);
      CHECK(s.ego.speed <= 10.0);
      CHECK(s.ego.x > 0.0);
      CHECK(s.ego.x < 3.5);
      CHECK(s.ego.y <= -14.0);
      CHECK(s.ego.y >= -24.0);
      CHECK(s.users.size() <= 8);
      for (const RoadUser& u : s.users) {
        CHECK(std::abs(u.x - s.ego.x) <= kWindowHalfWidth);
        CHECK(u.y - s.ego.y >= -kWindowBehind);
        CHECK(u.y - s.ego.y <= kWindowAhead);
        CHECK(u.speed <= kind_speed_cap(u.kind));
        CHECK(u.speed >= 0.0);
        const auto fp = kind_footprint(u.kind);
        CHECK(u.length == fp.first);
        CHECK(u.width == fp.second);
      }
      for (double a : s.gt_path.angles) CHECK(std::abs(a) <= 12.0);
    }
  }

  SUBCASE("corpus label statistics land in the calibrated ranges") {
    std::int64_t users = 0, important = 0, disagree = 0;
    std::set<UserKind> kinds;
    for (std::int64_t id = 0; id < 1000; ++id) {
      Scene s = generate_scene(2026, id, cfg);
      for (const RoadUser& u : s.users) {
        ++users;
        important += u.important ? 1 : 0;
        disagree += (u.important != u.important_alt) ? 1 : 0;
        kinds.insert(u.kind);
      }
    }
    REQUIRE(users > 1000);
    const double pos_rate = static_cast<double>(important) / static_cast<double>(users);
    const double dis_rate = static_cast<double>(disagree) / static_cast<double>(users);
    CHECK(pos_rate >= 0.2);
    CHECK(pos_rate <= 0.5);
    CHECK(dis_rate >= 0.05);
    CHECK(dis_rate <= 0.25);
    CHECK(kinds.size() == 3);
  }
}

TEST_CASE("scene JSON round-trip is exact") {
  GenConfig cfg;
  for (std::int64_t id = 0; id < 25; ++id) {
    Scene s = generate_scene(77, id, cfg);
    const std::string once = scene_to_json(s).dump();
    Scene back = scene_from_json(nlohmann::json::parse(once));
    CHECK(scene_to_json(back).dump() == once);
  }
}

TEST_CASE("rasterize examples") {
  SUBCASE("empty scene paints only the layout masks") {
    Scene s = basic_scene(1.75, -15.0, 6.0, Intent::straight);
    Raster r = rasterize(s);
    CHECK(r.user_boxes.empty());
    double road_sum = 0, cw_sum = 0;
    for (Index row = 0; row < kRasterSize; ++row)
      for (Index col = 0; col < kRasterSize; ++col) {
        const double road = cell(r, kChRoad, row, col);
        const double cw = cell(r, kChCrosswalk, row, col);
        CHECK((road == 0.0 || road == 1.0));
        CHECK((cw == 0.0 || cw == 1.0));
        road_sum += road;
        cw_sum += cw;
        for (Index ch = kChCarOcc; ch <= kChVelCos; ++ch) CHECK(cell(r, ch, row, col) == 0.0);
      }
    CHECK(road_sum > 0.0);
    CHECK(cw_sum > 0.0);
    // ego cell (col 48, row 88) sits on its own lane
    CHECK(cell(r, kChRoad, 88, 48) == 1.0);
  }

  SUBCASE("pedestrian footprint covers 2x2 cells with its velocity") {
    Scene s = basic_scene(1.75, -15.0, 6.0, Intent::straight);
    s.users.push_back(user_at(UserKind::pedestrian, 0.0, -5.0, 0.0, 1.2));
    Raster r = rasterize(s);
    REQUIRE(r.user_boxes.size() == 1);
    const Box b = r.user_boxes[0].box;
    CHECK(r.user_boxes[0].user_index == 0);
    CHECK(b.width() == 2.0);
    CHECK(b.height() == 2.0);
    Index painted = 0;
    for (Index row = 0; row < kRasterSize; ++row)
      for (Index col = 0; col < kRasterSize; ++col)
        if (cell(r, kChPedOcc, row, col) == 1.0) {
          ++painted;
          CHECK(static_cast<double>(col) >= b.x_min);
          CHECK(static_cast<double>(col) < b.x_max);
          CHECK(static_cast<double>(row) >= b.y_min);
          CHECK(static_cast<double>(row) < b.y_max);
          CHECK(cell(r, kChVelSin, row, col) == doctest::Approx(0.0).epsilon(1e-12));
          CHECK(cell(r, kChVelCos, row, col) == doctest::Approx(1.2).epsilon(1e-12));
        }
    CHECK(painted == 4);
  }

  SUBCASE("stationary user leaves velocity channels at zero") {
    Scene s = basic_scene(1.75, -15.0, 6.0, Intent::straight);
    s.users.push_back(user_at(UserKind::car, 3.05, -8.0, kPi / 2, 0.0));
    Raster r = rasterize(s);
    REQUIRE(r.user_boxes.size() == 1);
    for (Index row = 0; row < kRasterSize; ++row)
      for (Index col = 0; col < kRasterSize; ++col) {
        CHECK(cell(r, kChVelSin, row, col) == 0.0);
        CHECK(cell(r, kChVelCos, row, col) == 0.0);
      }
  }

  SUBCASE("later users overwrite velocity on shared cells") {
    Scene s = basic_scene(1.75, -15.0, 6.0, Intent::straight);
    s.users.push_back(user_at(UserKind::car, 0.0, 0.0, kPi / 2, 3.0));
    s.users.push_back(user_at(UserKind::car, 0.5, 0.0, kPi / 2, 6.0));
    Raster r = rasterize(s);
    REQUIRE(r.user_boxes.size() == 2);
    const Box overlap{std::max(r.user_boxes[0].box.x_min, r.user_boxes[1].box.x_min),
                      std::max(r.user_boxes[0].box.y_min, r.user_boxes[1].box.y_min),
                      std::min(r.user_boxes[0].box.x_max, r.user_boxes[1].box.x_max),
                      std::min(r.user_boxes[0].box.y_max, r.user_boxes[1].box.y_max)};
    REQUIRE(overlap.x_max > overlap.x_min);
    const Index row = static_cast<Index>(overlap.y_min);
    const Index col = static_cast<Index>(overlap.x_min);
    CHECK(cell(r, kChVelSin, row, col) == doctest::Approx(6.0).epsilon(1e-12));
  }

  SUBCASE("window clipping and exclusion") {
    Scene s = basic_scene(1.75, -15.0, 6.0, Intent::straight);
    s.users.push_back(user_at(UserKind::car, -22.5, -10.0, kPi / 2, 2.0));  // straddles edge
    s.users.push_back(user_at(UserKind::car, -30.0, -10.0, kPi / 2, 2.0));  // fully outside
    s.users.push_back(user_at(UserKind::car, 1.75, 30.0, kPi / 2, 2.0));    // straddles the top
    s.users.push_back(user_at(UserKind::car, 1.75, 33.0, kPi / 2, 2.0));    // beyond the top
    Raster r = rasterize(s);
    REQUIRE(r.user_boxes.size() == 2);
    CHECK(r.user_boxes[0].user_index == 0);
    CHECK(r.user_boxes[0].box.x_min == 0.0);
    CHECK(r.user_boxes[0].box.x_max == 1.0);
    CHECK(r.user_boxes[1].user_index == 2);
    CHECK(r.user_boxes[1].box.y_min == 0.0);
    CHECK(r.user_boxes[1].box.y_max == 2.0);
  }

  SUBCASE("generated scenes produce in-bounds boxes and finite channels") {
    GenConfig cfg;
    for (std::int64_t id = 0; id < 50; ++id) {
      Scene s = generate_scene(13, id, cfg);
      Raster r = rasterize(s);
      CHECK(r.channels.all_finite());
      for (const auto& ub : r.user_boxes) {
        CHECK(ub.box.valid());
        CHECK(ub.box.x_min >= 0.0);
        CHECK(ub.box.y_min >= 0.0);
        CHECK(ub.box.x_max <= 96.0);
        CHECK(ub.box.y_max <= 96.0);
        CHECK(ub.user_index >= 0);
        CHECK(static_cast<std::size_t>(ub.user_index) < s.users.size());
      }
    }
  }
}

TEST_CASE("raster file round-trip") {
  GenConfig cfg;
  Scene s = generate_scene(3, 21, cfg);
  Raster r = rasterize(s);
  const auto path = (std::filesystem::temp_directory_path() / "icare_raster_rt.icrt").string();
  save_raster(path, r);
  Raster back = load_raster(path);
  CHECK(bitwise_equal(back.channels, r.channels));
  REQUIRE(back.user_boxes.size() == r.user_boxes.size());
  for (std::size_t i = 0; i < r.user_boxes.size(); ++i) {
    CHECK(back.user_boxes[i].user_index == r.user_boxes[i].user_index);
    CHECK(back.user_boxes[i].box == r.user_boxes[i].box);
  }
  std::filesystem::remove(path);
}

TEST_CASE("dataset generation, split, and reload") {
  GenConfig cfg;
  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "icare_ds_test";
  fs::remove_all(base);

  SUBCASE("same (n, seed) twice gives byte-identical files") {
    Dataset a = generate_dataset(100, 7, cfg, (base / "a").string());
    Dataset b = generate_dataset(100, 7, cfg, (base / "b").string());
    CHECK(digest_file((base / "a" / "scenes.jsonl").string()) ==
          digest_file((base / "b" / "scenes.jsonl").string()));
    CHECK(digest_file((base / "a" / "manifest.json").string()) ==
          digest_file((base / "b" / "manifest.json").string()));
    CHECK(a.train_ids == b.train_ids);
    CHECK(a.test_ids == b.test_ids);

    Dataset c = generate_dataset(100, 8, cfg, (base / "c").string());
    CHECK(digest_file((base / "a" / "scenes.jsonl").string()) !=
          digest_file((base / "c" / "scenes.jsonl").string()));
  }

  SUBCASE("train list keeps only scenes with an important user") {
    Dataset ds = generate_dataset(150, 21, cfg, (base / "filter").string());
    CHECK(!ds.train_ids.empty());
    CHECK(!ds.test_ids.empty());
    for (std::int64_t id : ds.train_ids) {
      const Scene& s = ds.scene(id);
      bool any = false;
      for (const RoadUser& u : s.users) any |= u.important;
      CHECK(any);
      CHECK(split_is_train(id, cfg.train_fraction));
    }
    for (std::int64_t id : ds.test_ids) CHECK_FALSE(split_is_train(id, cfg.train_fraction));
  }

  SUBCASE("hash split fraction approximates 0.74") {
    std::int64_t train = 0;
    const std::int64_t n = 10000;
    for (std::int64_t id = 0; id < n; ++id)
      if (split_is_train(id, 0.74)) ++train;
    const double frac = static_cast<double>(train) / static_cast<double>(n);
    CHECK(frac >= 0.71);
    CHECK(frac <= 0.77);
  }

  SUBCASE("reload reproduces the in-memory dataset") {
    const std::string dir = (base / "reload").string();
    Dataset ds = generate_dataset(80, 3, cfg, dir);
    Dataset back = load_dataset(dir);
    CHECK(back.seed == ds.seed);
    CHECK(back.train_ids == ds.train_ids);
    CHECK(back.test_ids == ds.test_ids);
    REQUIRE(back.scenes.size() == ds.scenes.size());
    for (std::size_t i = 0; i < ds.scenes.size(); ++i)
      CHECK(scene_to_json(back.scenes[i]).dump() == scene_to_json(ds.scenes[i]).dump());
    CHECK(gen_config_to_json(back.config).dump() == gen_config_to_json(ds.config).dump());
  }

  SUBCASE("missing directory fails with path context") {
    CHECK_THROWS_AS(load_dataset((base / "nope").string()), IoError);
    CHECK_THROWS_AS(generate_dataset(0, 1, cfg, (base / "zero").string()), UsageError);
  }

  fs::remove_all(base);
}
