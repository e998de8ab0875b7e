#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "icare/geometry.hpp"
#include "icare/serialize.hpp"
#include "icare/tensor.hpp"

namespace icare {

// World frame: x east, y north (meters), heading in radians counterclockwise
// from +x (north = pi/2). The intersection center is the origin: two
// perpendicular two-lane roads, right-hand traffic, crosswalks on all arms.
struct WorldLayout {
  double lane_width = 3.5;       // one lane; road half-width equals lane_width
  double crosswalk_near = 3.5;   // crosswalk band start, meters from center
  double crosswalk_far = 5.5;    // crosswalk band end
  double entry_distance = 9.0;   // where an approach turns into the turn arc
};

enum class Intent { left, straight, right };
enum class UserKind { car, pedestrian, cyclist };

inline std::string to_string(Intent i) {
  switch (i) {
    case Intent::left: return "left";
    case Intent::straight: return "straight";
    case Intent::right: return "right";
  }
  throw UsageError("invalid intent value");
}

inline std::string to_string(UserKind k) {
  switch (k) {
    case UserKind::car: return "car";
    case UserKind::pedestrian: return "pedestrian";
    case UserKind::cyclist: return "cyclist";
  }
  throw UsageError("invalid user kind value");
}

inline Intent intent_from_string(const std::string& s) {
  if (s == "left") return Intent::left;
  if (s == "straight") return Intent::straight;
  if (s == "right") return Intent::right;
  throw IoError("unknown intent '" + s + "'");
}

inline UserKind kind_from_string(const std::string& s) {
  if (s == "car") return UserKind::car;
  if (s == "pedestrian") return UserKind::pedestrian;
  if (s == "cyclist") return UserKind::cyclist;
  throw IoError("unknown user kind '" + s + "'");
}

/// Fixed footprint (length along heading, width across) per kind, meters.
inline std::pair<double, double> kind_footprint(UserKind k) {
  switch (k) {
    case UserKind::car: return {4.5, 1.8};
    case UserKind::cyclist: return {1.8, 0.6};
    case UserKind::pedestrian: return {0.6, 0.6};
  }
  throw UsageError("invalid user kind value");
}

inline double kind_speed_cap(UserKind k) {
  switch (k) {
    case UserKind::car: return 12.0;
    case UserKind::cyclist: return 6.0;
    case UserKind::pedestrian: return 1.8;
  }
  throw UsageError("invalid user kind value");
}

struct EgoState {
  double x = 0, y = 0;
  double heading = 0;  // radians CCW from +x
  double speed = 0;    // m/s, in [2, 10]
  Intent intent = Intent::straight;
};

struct RoadUser {
  int id = 0;
  UserKind kind = UserKind::car;
  double x = 0, y = 0;
  double heading = 0;
  double speed = 0;
  double length = 0, width = 0;  // footprint, fixed per kind
  bool important = false;        // annotator 1 (oracle)
  bool important_alt = false;    // annotator 2 (perturbed oracle)
};

/// 10 heading changes in degrees, one per 1-meter ego step; |angle| <= 12.
struct PathVector {
  std::array<double, 10> angles{};

  static constexpr double kNormScale = 12.0;

  std::array<double, 10> normalized() const {
    std::array<double, 10> out{};
    for (std::size_t i = 0; i < 10; ++i) out[i] = angles[i] / kNormScale;
    return out;
  }
  static PathVector denormalized(const std::array<double, 10>& n) {
    PathVector p;
    for (std::size_t i = 0; i < 10; ++i) p.angles[i] = n[i] * kNormScale;
    return p;
  }
};

struct Scene {
  std::int64_t id = 0;
  EgoState ego;
  std::vector<RoadUser> users;
  PathVector gt_path;
  WorldLayout world;
};

// ---------------------------------------------------------------------------
// raster
// ---------------------------------------------------------------------------

inline constexpr Index kRasterSize = 96;       // cells per side
inline constexpr double kCellMeters = 0.5;     // meters per cell
inline constexpr Index kRasterChannels = 7;    // see channel_* below
inline constexpr double kWindowHalfWidth = 24.0;  // meters left/right of ego
inline constexpr double kWindowBehind = 4.0;      // meters behind ego
inline constexpr double kWindowAhead = 44.0;      // meters ahead of ego

// channel indices
inline constexpr Index kChRoad = 0;
inline constexpr Index kChCrosswalk = 1;
inline constexpr Index kChCarOcc = 2;
inline constexpr Index kChPedOcc = 3;
inline constexpr Index kChCycOcc = 4;
inline constexpr Index kChVelSin = 5;  // speed * sin(heading)
inline constexpr Index kChVelCos = 6;  // speed * cos(heading)

inline Index occupancy_channel(UserKind k) {
  switch (k) {
    case UserKind::car: return kChCarOcc;
    case UserKind::pedestrian: return kChPedOcc;
    case UserKind::cyclist: return kChCycOcc;
  }
  throw UsageError("invalid user kind value");
}

/// Top-down ego-centered grid: ego at column 48, row 88 (bottom-center),
/// north up; y grows downward in raster rows.
struct Raster {
  Tensor<double> channels;  // [7 x 96 x 96]
  struct UserBox {
    int user_index = 0;  // index into Scene::users
    Box box;             // painted extent, raster px
  };
  std::vector<UserBox> user_boxes;

  Raster() : channels({kRasterChannels, kRasterSize, kRasterSize}) {}
};

/// Network input: raster channels with the velocity planes scaled down so all
/// channels are O(1) (occupancy/road are 0/1 but speeds reach ~10 m/s, which
/// would otherwise dominate the first conv at init).
inline Tensor<double> raster_input(const Raster& raster) {
  Tensor<double> x = raster.channels;
  constexpr Index plane = kRasterSize * kRasterSize;
  for (Index c : {kChVelSin, kChVelCos})
    for (Index i = c * plane; i < (c + 1) * plane; ++i) x[i] *= 0.1;
  return x.reshaped({1, kRasterChannels, kRasterSize, kRasterSize});
}

// ---------------------------------------------------------------------------
// JSON encoding (one scene per JSONL line)
// ---------------------------------------------------------------------------

inline nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json j;
  j["id"] = s.id;
  j["ego"] = {{"x", s.ego.x},
              {"y", s.ego.y},
              {"heading", s.ego.heading},
              {"speed", s.ego.speed},
              {"intent", to_string(s.ego.intent)}};
  j["users"] = nlohmann::json::array();
  for (const RoadUser& u : s.users)
    j["users"].push_back({{"id", u.id},
                          {"kind", to_string(u.kind)},
                          {"x", u.x},
                          {"y", u.y},
                          {"heading", u.heading},
                          {"speed", u.speed},
                          {"length", u.length},
                          {"width", u.width},
                          {"important", u.important},
                          {"important_alt", u.important_alt}});
  j["gt_path"] = s.gt_path.angles;
  j["world"] = {{"lane_width", s.world.lane_width},
                {"crosswalk_near", s.world.crosswalk_near},
                {"crosswalk_far", s.world.crosswalk_far},
                {"entry_distance", s.world.entry_distance}};
  return j;
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.id = j.at("id").get<std::int64_t>();
  const auto& e = j.at("ego");
  s.ego.x = e.at("x").get<double>();
  s.ego.y = e.at("y").get<double>();
  s.ego.heading = e.at("heading").get<double>();
  s.ego.speed = e.at("speed").get<double>();
  s.ego.intent = intent_from_string(e.at("intent").get<std::string>());
  for (const auto& ju : j.at("users")) {
    RoadUser u;
    u.id = ju.at("id").get<int>();
    u.kind = kind_from_string(ju.at("kind").get<std::string>());
    u.x = ju.at("x").get<double>();
    u.y = ju.at("y").get<double>();
    u.heading = ju.at("heading").get<double>();
    u.speed = ju.at("speed").get<double>();
    u.length = ju.at("length").get<double>();
    u.width = ju.at("width").get<double>();
    u.important = ju.at("important").get<bool>();
    u.important_alt = ju.at("important_alt").get<bool>();
    s.users.push_back(u);
  }
  const auto& gp = j.at("gt_path");
  if (gp.size() != 10) throw IoError("gt_path must have 10 entries");
  for (std::size_t i = 0; i < 10; ++i) s.gt_path.angles[i] = gp[i].get<double>();
  const auto& w = j.at("world");
  s.world.lane_width = w.at("lane_width").get<double>();
  s.world.crosswalk_near = w.at("crosswalk_near").get<double>();
  s.world.crosswalk_far = w.at("crosswalk_far").get<double>();
  s.world.entry_distance = w.at("entry_distance").get<double>();
  return s;
}

// ---------------------------------------------------------------------------
// raster tensor files ("ICRT")
// ---------------------------------------------------------------------------

inline void save_raster(const std::string& path, const Raster& r) {
  std::vector<records::Record> recs;
  recs.push_back(records::from_tensor("channels", r.channels));
  Tensor<double> boxes({std::max<Index>(1, static_cast<Index>(r.user_boxes.size())), 5});
  for (std::size_t i = 0; i < r.user_boxes.size(); ++i) {
    const auto& ub = r.user_boxes[i];
    boxes[static_cast<Index>(i) * 5 + 0] = static_cast<double>(ub.user_index);
    boxes[static_cast<Index>(i) * 5 + 1] = ub.box.x_min;
    boxes[static_cast<Index>(i) * 5 + 2] = ub.box.y_min;
    boxes[static_cast<Index>(i) * 5 + 3] = ub.box.x_max;
    boxes[static_cast<Index>(i) * 5 + 4] = ub.box.y_max;
  }
  recs.push_back(records::from_string("n_boxes", std::to_string(r.user_boxes.size())));
  recs.push_back(records::from_tensor("boxes", boxes));
  records::write_file(path, kRasterMagic, recs);
}

inline Raster load_raster(const std::string& path) {
  const auto recs = records::read_file(path, kRasterMagic);
  Raster r;
  r.channels = records::to_tensor<double>(records::require(recs, "channels", path));
  if (r.channels.shape() != Shape{kRasterChannels, kRasterSize, kRasterSize})
    throw IoError("unexpected raster shape " + shape_str(r.channels.shape()) + " in " + path);
  const std::size_t n = std::stoull(records::to_string(records::require(recs, "n_boxes", path)));
  Tensor<double> boxes = records::to_tensor<double>(records::require(recs, "boxes", path));
  for (std::size_t i = 0; i < n; ++i) {
    Raster::UserBox ub;
    ub.user_index = static_cast<int>(boxes[static_cast<Index>(i) * 5 + 0]);
    ub.box = Box{boxes[static_cast<Index>(i) * 5 + 1], boxes[static_cast<Index>(i) * 5 + 2],
                 boxes[static_cast<Index>(i) * 5 + 3], boxes[static_cast<Index>(i) * 5 + 4]};
    r.user_boxes.push_back(ub);
  }
  return r;
}

}  // namespace icare
