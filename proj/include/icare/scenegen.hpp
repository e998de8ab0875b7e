#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "icare/rng.hpp"
#include "icare/scene.hpp"

namespace icare {

inline constexpr double kPi = 3.14159265358979323846;

/// Thresholds for the kinematic importance oracle (annotator 1).
struct OracleConfig {
  double r_safe = 4.0;             // center distance threshold, meters
  double corridor_halfwidth = 1.5; // stationary-user corridor around ego path
  int horizon_steps = 10;          // ego waypoints past the start (1 m each)
  double boundary_band = 1.0;      // |min_dist - r_safe| band eligible to flip
  double flip_prob = 0.05;         // annotator-2 flip probability in the band
};

struct GenConfig {
  OracleConfig oracle;          // annotator 1
  double alt_r_safe = 3.0;      // annotator 2 distance threshold
  double alt_corridor = 1.0;    // annotator 2 corridor half-width
  int max_users = 8;            // user count sampled uniformly in 0..max_users
  double train_fraction = 0.74; // scene-id hash split
};

// ---------------------------------------------------------------------------
// ego ground-truth path
// ---------------------------------------------------------------------------

namespace detail {

/// Deterministic arc core: zero until straight_steps, then per_step_deg, plus
/// per-step jitter, clamped to the +/-12 degree path range.
inline PathVector arc_path(int straight_steps, double per_step_deg,
                           const std::array<double, 10>& jitter) {
  PathVector path;
  for (int i = 0; i < 10; ++i) {
    const double base = (i < straight_steps) ? 0.0 : per_step_deg;
    path.angles[static_cast<std::size_t>(i)] =
        std::clamp(base + jitter[static_cast<std::size_t>(i)], -12.0, 12.0);
  }
  return path;
}

}  // namespace detail

/// Per-step heading changes for the ego's intended maneuver: zero (plus small
/// jitter) until the approach reaches `entry_distance` from the intersection
/// center, then a constant-curvature arc for left/right intents.
inline PathVector ego_path_ground_truth(const EgoState& ego, const WorldLayout& world,
                                        RandomStream& rng) {
  const double dist_to_entry = -ego.y - world.entry_distance;
  const int straight_steps =
      static_cast<int>(std::clamp(std::floor(dist_to_entry), 0.0, 10.0));
  double per_step = 0.0;
  if (ego.intent != Intent::straight) {
    const double radius = rng.uniform(8.0, 12.0);
    per_step = (180.0 / kPi) / radius;
    if (ego.intent == Intent::right) per_step = -per_step;
  }
  std::array<double, 10> jitter{};
  for (double& j : jitter) j = rng.normal(0.0, 0.3);
  return detail::arc_path(straight_steps, per_step, jitter);
}

struct Waypoint {
  double x = 0, y = 0;
};

/// Integrates a path vector from the ego pose: 1-meter steps, heading updated
/// by angles[i] (degrees) before each step. Returns 11 positions including
/// the start.
inline std::vector<Waypoint> unroll_path(const EgoState& ego, const PathVector& path) {
  std::vector<Waypoint> pts;
  pts.reserve(11);
  double x = ego.x, y = ego.y, heading = ego.heading;
  pts.push_back({x, y});
  for (int i = 0; i < 10; ++i) {
    heading += path.angles[static_cast<std::size_t>(i)] * kPi / 180.0;
    x += std::cos(heading);
    y += std::sin(heading);
    pts.push_back({x, y});
  }
  return pts;
}

// ---------------------------------------------------------------------------
// importance oracle
// ---------------------------------------------------------------------------

namespace detail {

inline double point_segment_distance(double px, double py, const Waypoint& a,
                                     const Waypoint& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((px - a.x) * dx + (py - a.y) * dy) / len2, 0.0, 1.0);
  const double cx = a.x + t * dx, cy = a.y + t * dy;
  return std::hypot(px - cx, py - cy);
}

inline double point_polyline_distance(double px, double py,
                                      const std::vector<Waypoint>& pts) {
  double best = std::hypot(px - pts.front().x, py - pts.front().y);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    best = std::min(best, point_segment_distance(px, py, pts[i], pts[i + 1]));
  return best;
}

}  // namespace detail

struct OracleResult {
  bool important = false;
  double min_dist = 0;  // minimum sampled center distance to the ego
};

/// Kinematic importance: the ego tracks its ground-truth waypoints (1 m per
/// step, so waypoint k is reached at t = k / ego.speed); every user moves at
/// constant velocity. A user is important when the minimum sampled center
/// distance is at most r_safe, or when it is near-stationary (< 0.2 m/s)
/// within corridor_halfwidth of the ego path polyline.
inline std::vector<OracleResult> importance_oracle(const Scene& scene,
                                                   const OracleConfig& cfg) {
  if (scene.ego.speed <= 0.0) throw UsageError("importance_oracle: ego speed must be positive");
  const auto pts = unroll_path(scene.ego, scene.gt_path);
  std::vector<OracleResult> out;
  out.reserve(scene.users.size());
  for (const RoadUser& u : scene.users) {
    const double vx = u.speed * std::cos(u.heading);
    const double vy = u.speed * std::sin(u.heading);
    double min_dist = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= cfg.horizon_steps; ++k) {
      const double t = static_cast<double>(k) / scene.ego.speed;
      const auto& w = pts[static_cast<std::size_t>(k)];
      min_dist = std::min(min_dist, std::hypot(u.x + vx * t - w.x, u.y + vy * t - w.y));
    }
    const bool stationary = u.speed < 0.2;
    const bool in_corridor =
        detail::point_polyline_distance(u.x, u.y, pts) <= cfg.corridor_halfwidth;
    OracleResult r;
    r.min_dist = min_dist;
    r.important = (min_dist <= cfg.r_safe) || (stationary && in_corridor);
    out.push_back(r);
  }
  return out;
}

/// Annotator 2: the oracle re-run with tighter thresholds, then a small
/// deterministic label flip for users whose minimum distance falls within
/// boundary_band of the tighter r_safe (the cases a human would waver on).
inline std::vector<bool> perturb_annotations(const Scene& scene, const GenConfig& cfg,
                                             std::uint64_t seed) {
  OracleConfig alt = cfg.oracle;
  alt.r_safe = cfg.alt_r_safe;
  alt.corridor_halfwidth = cfg.alt_corridor;
  const auto res = importance_oracle(scene, alt);
  RandomStream flips(RandomStream::derive(seed, static_cast<std::uint64_t>(scene.id), 0xA17));
  std::vector<bool> labels(res.size());
  for (std::size_t i = 0; i < res.size(); ++i) {
    bool v = res[i].important;
    if (std::abs(res[i].min_dist - alt.r_safe) <= cfg.oracle.boundary_band &&
        flips.bernoulli(cfg.oracle.flip_prob))
      v = !v;
    labels[i] = v;
  }
  return labels;
}

// ---------------------------------------------------------------------------
// scene synthesis
// ---------------------------------------------------------------------------

namespace detail {

inline double intent_lane_offset(Intent i) {
  switch (i) {
    case Intent::left: return -0.8;
    case Intent::straight: return 0.0;
    case Intent::right: return 0.8;
  }
  throw UsageError("invalid intent value");
}

struct Window {
  double x_lo, x_hi, y_lo, y_hi;
};

inline Window scene_window(const EgoState& ego) {
  return {ego.x - kWindowHalfWidth, ego.x + kWindowHalfWidth, ego.y - kWindowBehind,
          ego.y + kWindowAhead};
}

inline void clamp_to_window(RoadUser& u, const Window& w) {
  constexpr double m = 0.5;
  u.x = std::clamp(u.x, w.x_lo + m, w.x_hi - m);
  u.y = std::clamp(u.y, w.y_lo + m, w.y_hi - m);
}

inline RoadUser make_user(UserKind kind, double x, double y, double heading, double speed) {
  RoadUser u;
  u.kind = kind;
  u.x = x;
  u.y = y;
  u.heading = heading;
  u.speed = std::clamp(speed, 0.0, kind_speed_cap(kind));
  const auto fp = kind_footprint(kind);
  u.length = fp.first;
  u.width = fp.second;
  return u;
}

// A car ahead of the ego in its own lane; half crawl along slowly (the ego
// closes in), half roughly match the ego's speed.
inline RoadUser sample_leading_car(const EgoState& ego, RandomStream& rng) {
  const double x = 1.75 + rng.normal(0.0, 0.15);
  const double y = ego.y + rng.uniform(5.0, 16.0);
  const double heading = kPi / 2 + rng.normal(0.0, 0.04);
  double speed;
  if (rng.bernoulli(0.55))
    speed = rng.uniform(0.5, 2.5);
  else
    speed = rng.uniform(std::max(3.0, ego.speed - 0.5), std::min(11.0, ego.speed + 2.0));
  return make_user(UserKind::car, x, y, heading, speed);
}

// Southbound traffic in the opposite lane. On a straight approach these pass
// about one road-width away; a left-turning ego crosses their lane.
inline RoadUser sample_oncoming_car(const EgoState& ego, RandomStream& rng) {
  const double x = -1.75 + rng.normal(0.0, 0.15);
  const double y = ego.y + rng.uniform(12.0, 34.0);
  const double heading = -kPi / 2 + rng.normal(0.0, 0.04);
  return make_user(UserKind::car, x, y, heading, rng.uniform(4.0, 9.0));
}

// Cross traffic on the east-west road, either approaching the intersection
// or leaving it (same placement strip, opposite velocity).
inline RoadUser sample_crossing_car(const EgoState&, RandomStream& rng) {
  const bool east_side = rng.bernoulli(0.5);
  const bool toward = rng.bernoulli(0.65);
  const double dist = rng.uniform(4.0, 16.0);
  double x, y, heading;
  if (east_side) {
    x = dist;
    heading = toward ? kPi : 0.0;         // toward: westbound
    y = toward ? 1.75 : -1.75;            // right-hand lanes
  } else {
    x = -dist;
    heading = toward ? 0.0 : kPi;         // toward: eastbound
    y = toward ? -1.75 : 1.75;
  }
  y += rng.normal(0.0, 0.15);
  return make_user(UserKind::car, x, y, heading + rng.normal(0.0, 0.03),
                   rng.uniform(3.0, 8.0));
}

// Stationary car on the south approach: usually off the road shoulder,
// sometimes hugging the ego lane's curb edge.
inline RoadUser sample_parked_car(const EgoState& ego, RandomStream& rng) {
  double x;
  if (rng.bernoulli(0.35)) {
    x = 3.05 + rng.normal(0.0, 0.05);  // curb lane edge
  } else {
    const double side = rng.bernoulli(0.75) ? 1.0 : -1.0;
    x = side * rng.uniform(4.5, 6.0);  // shoulder
  }
  const double y_hi = std::max(5.0, std::min(26.0, -6.5 - ego.y));
  const double y = ego.y + rng.uniform(4.0, y_hi);
  return make_user(UserKind::car, x, y, kPi / 2, 0.0);
}

// Pedestrian: either on the south crosswalk (the band the ego reaches within
// its horizon) or on a sidewalk heading away from the road.
inline RoadUser sample_pedestrian(const EgoState& ego, RandomStream& rng) {
  const double speed = rng.uniform(0.8, 1.6);
  if (rng.bernoulli(0.65)) {
    const double x = rng.uniform(-4.5, 4.5);
    const double y = -4.5 + rng.normal(0.0, 0.25);
    const double heading = rng.bernoulli(0.5) ? 0.0 : kPi;
    return make_user(UserKind::pedestrian, x, y, heading + rng.normal(0.0, 0.05), speed);
  }
  const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
  const double x = side * rng.uniform(4.5, 7.0);
  const double y = ego.y + rng.uniform(3.0, 20.0);
  const double heading = side > 0 ? 0.0 : kPi;  // walking away from the road
  return make_user(UserKind::pedestrian, x, y, heading + rng.normal(0.0, 0.05), speed);
}

// Cyclist on the south approach: half ride the curb side of the ego lane,
// half keep to the sidewalk strip.
inline RoadUser sample_cyclist(const EgoState& ego, RandomStream& rng) {
  double x;
  if (rng.bernoulli(0.6)) {
    x = 3.2 + rng.normal(0.0, 0.1);
  } else {
    const double side = rng.bernoulli(0.8) ? 1.0 : -1.0;
    x = side * rng.uniform(5.8, 7.0);
  }
  const double y = ego.y + rng.uniform(3.0, 14.0);
  return make_user(UserKind::cyclist, x, y, kPi / 2 + rng.normal(0.0, 0.05),
                   rng.uniform(2.5, 5.5));
}

}  // namespace detail

/// Deterministic synthesis of one intersection scene. All randomness comes
/// from a stream derived from (seed, scene_id), so scenes are independent of
/// generation order.
inline Scene generate_scene(std::uint64_t seed, std::int64_t scene_id, const GenConfig& cfg) {
  Scene scene;
  scene.id = scene_id;
  RandomStream rng(RandomStream::derive(seed, static_cast<std::uint64_t>(scene_id)));

  const int intent_pick = static_cast<int>(rng.uniform_index(3));
  scene.ego.intent = intent_pick == 0   ? Intent::left
                     : intent_pick == 1 ? Intent::straight
                                        : Intent::right;
  const double d = rng.uniform(14.0, 24.0);
  scene.ego.speed = rng.uniform(5.0, 9.0);
  scene.ego.heading = kPi / 2;
  scene.ego.x = std::clamp(
      1.75 + detail::intent_lane_offset(scene.ego.intent) + rng.normal(0.0, 0.12), 0.4, 3.1);
  scene.ego.y = -d;

  scene.gt_path = ego_path_ground_truth(scene.ego, scene.world, rng);

  const auto window = detail::scene_window(scene.ego);
  const std::size_t n_users = rng.uniform_index(static_cast<std::uint64_t>(cfg.max_users) + 1);
  for (std::size_t i = 0; i < n_users; ++i) {
    RoadUser u;
    switch (rng.uniform_index(6)) {
      case 0: u = detail::sample_leading_car(scene.ego, rng); break;
      case 1: u = detail::sample_oncoming_car(scene.ego, rng); break;
      case 2: u = detail::sample_crossing_car(scene.ego, rng); break;
      case 3: u = detail::sample_parked_car(scene.ego, rng); break;
      case 4: u = detail::sample_pedestrian(scene.ego, rng); break;
      default: u = detail::sample_cyclist(scene.ego, rng); break;
    }
    detail::clamp_to_window(u, window);
    u.id = static_cast<int>(i);
    scene.users.push_back(u);
  }

  const auto res = importance_oracle(scene, cfg.oracle);
  const auto alt = perturb_annotations(scene, cfg, seed);
  for (std::size_t i = 0; i < scene.users.size(); ++i) {
    scene.users[i].important = res[i].important;
    scene.users[i].important_alt = alt[i];
  }
  return scene;
}

// ---------------------------------------------------------------------------
// rasterization
// ---------------------------------------------------------------------------

/// Paints the 7x96x96 ego-centered raster (0.5 m cells, north up, ego at
/// column 48 / row 88; the ego itself is not painted). Users fully outside
/// the window are dropped; partially visible boxes are clipped.
inline Raster rasterize(const Scene& scene) {
  Raster r;
  const double x0 = scene.ego.x - kWindowHalfWidth;
  const double y1 = scene.ego.y + kWindowAhead;
  auto at = [&](Index ch, Index row, Index col) -> double& {
    return r.channels[(ch * kRasterSize + row) * kRasterSize + col];
  };

  const double road = scene.world.lane_width;  // road half-width
  const double cw0 = scene.world.crosswalk_near, cw1 = scene.world.crosswalk_far;
  for (Index row = 0; row < kRasterSize; ++row) {
    const double yc = y1 - (static_cast<double>(row) + 0.5) * kCellMeters;
    for (Index col = 0; col < kRasterSize; ++col) {
      const double xc = x0 + (static_cast<double>(col) + 0.5) * kCellMeters;
      const double ax = std::abs(xc), ay = std::abs(yc);
      if (ax <= road || ay <= road) at(kChRoad, row, col) = 1.0;
      if ((ax <= road && ay > cw0 && ay <= cw1) || (ay <= road && ax > cw0 && ax <= cw1))
        at(kChCrosswalk, row, col) = 1.0;
    }
  }

  for (std::size_t ui = 0; ui < scene.users.size(); ++ui) {
    const RoadUser& u = scene.users[ui];
    const double hx =
        std::abs(std::cos(u.heading)) * u.length / 2 + std::abs(std::sin(u.heading)) * u.width / 2;
    const double hy =
        std::abs(std::sin(u.heading)) * u.length / 2 + std::abs(std::cos(u.heading)) * u.width / 2;
    const double col_min = (u.x - hx - x0) / kCellMeters;
    const double row_min = (y1 - (u.y + hy)) / kCellMeters;
    const Index nc = static_cast<Index>(std::ceil(2 * hx / kCellMeters));
    const Index nr = static_cast<Index>(std::ceil(2 * hy / kCellMeters));
    Index c0 = static_cast<Index>(std::floor(col_min));
    Index r0 = static_cast<Index>(std::floor(row_min));
    Index c1 = c0 + nc, r1 = r0 + nr;
    c0 = std::max<Index>(c0, 0);
    r0 = std::max<Index>(r0, 0);
    c1 = std::min<Index>(c1, kRasterSize);
    r1 = std::min<Index>(r1, kRasterSize);
    if (c0 >= c1 || r0 >= r1) continue;  // fully outside the window

    const Index occ = occupancy_channel(u.kind);
    const double vsin = u.speed * std::sin(u.heading);
    const double vcos = u.speed * std::cos(u.heading);
    for (Index row = r0; row < r1; ++row)
      for (Index col = c0; col < c1; ++col) {
        at(occ, row, col) = 1.0;
        at(kChVelSin, row, col) = vsin;  // later users overwrite earlier ones
        at(kChVelCos, row, col) = vcos;
      }
    Raster::UserBox ub;
    ub.user_index = static_cast<int>(ui);
    ub.box = Box{static_cast<double>(c0), static_cast<double>(r0), static_cast<double>(c1),
                 static_cast<double>(r1)};
    r.user_boxes.push_back(ub);
  }
  return r;
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

/// Train/test split depends only on the scene id (stable under corpus growth).
inline bool split_is_train(std::int64_t scene_id, double train_fraction) {
  const std::uint64_t h = stable_hash(static_cast<std::uint64_t>(scene_id), 0x5CE4E5u);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < train_fraction;
}

/// Splits ids by a salted hash; used for the train/val holdout inside a
/// training manifest (deterministic, order-independent).
inline void holdout_split(const std::vector<std::int64_t>& ids, double val_fraction,
                          std::uint64_t salt, std::vector<std::int64_t>& fit,
                          std::vector<std::int64_t>& val) {
  for (std::int64_t id : ids) {
    const std::uint64_t h = stable_hash(static_cast<std::uint64_t>(id), salt);
    if (static_cast<double>(h >> 11) * 0x1.0p-53 < val_fraction)
      val.push_back(id);
    else
      fit.push_back(id);
  }
}

struct Dataset {
  GenConfig config;
  std::uint64_t seed = 0;
  std::vector<Scene> scenes;                // all scenes, id order
  std::vector<std::int64_t> train_ids;      // train split, >=1 important user
  std::vector<std::int64_t> test_ids;       // full test split
  std::map<std::int64_t, std::size_t> index;  // scene id -> position in scenes

  const Scene& scene(std::int64_t id) const {
    auto it = index.find(id);
    if (it == index.end()) throw UsageError("dataset has no scene id " + std::to_string(id));
    return scenes[it->second];
  }
};

inline nlohmann::json gen_config_to_json(const GenConfig& c) {
  return {{"r_safe", c.oracle.r_safe},
          {"corridor_halfwidth", c.oracle.corridor_halfwidth},
          {"horizon_steps", c.oracle.horizon_steps},
          {"boundary_band", c.oracle.boundary_band},
          {"flip_prob", c.oracle.flip_prob},
          {"alt_r_safe", c.alt_r_safe},
          {"alt_corridor", c.alt_corridor},
          {"max_users", c.max_users},
          {"train_fraction", c.train_fraction}};
}

inline GenConfig gen_config_from_json(const nlohmann::json& j) {
  GenConfig c;
  c.oracle.r_safe = j.at("r_safe").get<double>();
  c.oracle.corridor_halfwidth = j.at("corridor_halfwidth").get<double>();
  c.oracle.horizon_steps = j.at("horizon_steps").get<int>();
  c.oracle.boundary_band = j.at("boundary_band").get<double>();
  c.oracle.flip_prob = j.at("flip_prob").get<double>();
  c.alt_r_safe = j.at("alt_r_safe").get<double>();
  c.alt_corridor = j.at("alt_corridor").get<double>();
  c.max_users = j.at("max_users").get<int>();
  c.train_fraction = j.at("train_fraction").get<double>();
  return c;
}

/// Writes scenes.jsonl plus manifest.json under out_dir and returns the
/// in-memory dataset. Train scenes without a single important user are left
/// out of the training list; the test list keeps every test-split scene.
inline Dataset generate_dataset(std::int64_t n_scenes, std::uint64_t seed, const GenConfig& cfg,
                                const std::string& out_dir) {
  if (n_scenes <= 0) throw UsageError("generate_dataset: n_scenes must be positive");
  std::filesystem::create_directories(out_dir);

  Dataset ds;
  ds.config = cfg;
  ds.seed = seed;

  std::ofstream jsonl(out_dir + "/scenes.jsonl");
  if (!jsonl) throw IoError("cannot open " + out_dir + "/scenes.jsonl for writing");
  std::int64_t users_total = 0, important_total = 0, disagree_total = 0;
  for (std::int64_t id = 0; id < n_scenes; ++id) {
    Scene s = generate_scene(seed, id, cfg);
    jsonl << scene_to_json(s).dump() << '\n';
    users_total += static_cast<std::int64_t>(s.users.size());
    bool any_important = false;
    for (const RoadUser& u : s.users) {
      important_total += u.important ? 1 : 0;
      disagree_total += (u.important != u.important_alt) ? 1 : 0;
      any_important |= u.important;
    }
    if (split_is_train(id, cfg.train_fraction)) {
      if (any_important) ds.train_ids.push_back(id);
    } else {
      ds.test_ids.push_back(id);
    }
    ds.index[id] = ds.scenes.size();
    ds.scenes.push_back(std::move(s));
  }
  jsonl.close();
  if (!jsonl) throw IoError("failed writing " + out_dir + "/scenes.jsonl");

  nlohmann::json manifest;
  manifest["config"] = gen_config_to_json(cfg);
  manifest["seed"] = seed;
  manifest["n_scenes"] = n_scenes;
  manifest["train_ids"] = ds.train_ids;
  manifest["test_ids"] = ds.test_ids;
  manifest["stats"] = {
      {"users", users_total},
      {"important", important_total},
      {"disagreements", disagree_total},
      {"positive_rate", users_total ? static_cast<double>(important_total) / users_total : 0.0},
      {"disagreement_rate",
       users_total ? static_cast<double>(disagree_total) / users_total : 0.0}};
  std::ofstream mf(out_dir + "/manifest.json");
  if (!mf) throw IoError("cannot open " + out_dir + "/manifest.json for writing");
  mf << manifest.dump(2) << '\n';
  mf.close();
  if (!mf) throw IoError("failed writing " + out_dir + "/manifest.json");
  return ds;
}

inline Dataset load_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw IoError("cannot open " + dir + "/manifest.json (run gen first)");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid manifest.json in " + dir + ": " + e.what());
  }

  Dataset ds;
  ds.config = gen_config_from_json(manifest.at("config"));
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  ds.train_ids = manifest.at("train_ids").get<std::vector<std::int64_t>>();
  ds.test_ids = manifest.at("test_ids").get<std::vector<std::int64_t>>();

  std::ifstream jsonl(dir + "/scenes.jsonl");
  if (!jsonl) throw IoError("cannot open " + dir + "/scenes.jsonl");
  std::string line;
  while (std::getline(jsonl, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("invalid scene line in " + dir + "/scenes.jsonl: " + e.what());
    }
    ds.index[j.at("id").get<std::int64_t>()] = ds.scenes.size();
    ds.scenes.push_back(scene_from_json(j));
  }
  return ds;
}

}  // namespace icare
