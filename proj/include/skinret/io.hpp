#pragma once

// File formats.
//
//   skeleton  JSON  {"joints": [{"name", "parent" (name or null), "offset": [x,y,z]}]}
//   motion    JSON  {"fps", "joints": [names], "frames": [{"root": {"velocity": [3], "yaw"},
//                    "rotations": [[w,x,y,z] per joint]}]}
//   weights   JSON  {"joints": [names], "weights": [{joint name: weight} per vertex]}
//   mesh      OBJ   v / f lines; quads are fan-split, larger faces rejected
//   bundle    JSON  {"name", "skeleton", "mesh", "weights"} with paths relative to the bundle
//   checkpoint      u64 LE header length, JSON header, float64 LE parameters in visit order
//   config    JSON  training configuration; every key optional, unknown keys rejected
//   field     .raw float32 LE grid (x fastest) plus a .json header
//
// Loaders reject anything outside the schema. Two tolerance rules:
// quaternions within 1e-3 of unit norm and weight rows within 0.05 of one
// are renormalized (the latter reported through the log callback).

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "skinret/errors.hpp"
#include "skinret/fields.hpp"
#include "skinret/geometry.hpp"
#include "skinret/kinematics.hpp"
#include "skinret/math.hpp"
#include "skinret/metrics.hpp"
#include "skinret/networks.hpp"
#include "skinret/pipeline.hpp"
#include "skinret/training.hpp"

namespace skinret {

using Json = nlohmann::json;
using LogFn = std::function<void(const std::string&)>;

inline constexpr double kQuaternionNormTolerance = 1e-3;
inline constexpr double kWeightSumTolerance = 0.05;

namespace io_detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path.string() + ": cannot open for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw ParseError(path.string() + ": write failed");
}

inline Json parse_json(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(where + ": " + e.what());
  }
}

// Field access with the document path carried into every message.
class Cursor {
 public:
  Cursor(const Json& j, std::string path) : j_(j), path_(std::move(path)) {}

  const Json& json() const { return j_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(path_ + ": " + what); }

  void expect_object(std::initializer_list<const char*> required, std::initializer_list<const char*> optional = {}) const {
    if (!j_.is_object()) fail("expected an object");
    std::set<std::string> known;
    for (const char* k : required) {
      known.insert(k);
      if (!j_.contains(k)) fail("missing field '" + std::string(k) + "'");
    }
    for (const char* k : optional) known.insert(k);
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!known.count(it.key())) fail("unknown field '" + it.key() + "'");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  Cursor at(const char* key) const { return {j_.at(key), path_ + "." + key}; }
  Cursor at(std::size_t i) const { return {j_.at(i), path_ + "[" + std::to_string(i) + "]"}; }

  std::size_t array_size() const {
    if (!j_.is_array()) fail("expected an array");
    return j_.size();
  }

  double number() const {
    if (!j_.is_number()) fail("expected a number");
    const double x = j_.get<double>();
    if (!std::isfinite(x)) fail("expected a finite number");
    return x;
  }

  std::uint64_t unsigned_integer() const {
    if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<std::int64_t>() >= 0)) {
      fail("expected a nonnegative integer");
    }
    return j_.get<std::uint64_t>();
  }

  bool boolean() const {
    if (!j_.is_boolean()) fail("expected a boolean");
    return j_.get<bool>();
  }

  std::string string() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }

  std::vector<double> numbers(std::size_t n) const {
    if (array_size() != n) fail("expected " + std::to_string(n) + " numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(at(i).number());
    return out;
  }

  Vec3d vec3() const {
    const auto v = numbers(3);
    return {v[0], v[1], v[2]};
  }

  std::vector<std::string> strings() const {
    std::vector<std::string> out;
    for (std::size_t i = 0, n = array_size(); i < n; ++i) out.push_back(at(i).string());
    return out;
  }

 private:
  const Json& j_;
  std::string path_;
};

inline Json vec3_json(const Vec3d& v) { return Json::array({v.x, v.y, v.z}); }

inline void put_u64(std::string& out, std::uint64_t x) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((x >> (8 * b)) & 0xffu));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t x = 0;
  for (int b = 7; b >= 0; --b) x = (x << 8) | p[b];
  return x;
}

inline void put_u32(std::string& out, std::uint32_t x) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((x >> (8 * b)) & 0xffu));
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Skeletons.

inline Json skeleton_to_json(const Skeleton& s) {
  Json joints = Json::array();
  for (std::size_t j = 0; j < s.size(); ++j) {
    const int p = s.parents()[j];
    joints.push_back({{"name", s.joint_names()[j]},
                      {"parent", p < 0 ? Json(nullptr) : Json(s.joint_names()[static_cast<std::size_t>(p)])},
                      {"offset", io_detail::vec3_json(s.offsets()[j])}});
  }
  return {{"joints", joints}};
}

inline Skeleton skeleton_from_json(const Json& j, const std::string& where = "skeleton") {
  const io_detail::Cursor root(j, where);
  root.expect_object({"joints"});
  const auto joints = root.at("joints");
  const std::size_t n = joints.array_size();
  std::vector<std::string> names;
  std::vector<std::string> parent_names;
  std::vector<bool> is_root;
  std::vector<Vec3d> offsets;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = joints.at(i);
    c.expect_object({"name", "parent", "offset"});
    names.push_back(c.at("name").string());
    const auto p = c.at("parent");
    is_root.push_back(p.json().is_null());
    parent_names.push_back(p.json().is_null() ? std::string() : p.string());
    offsets.push_back(c.at("offset").vec3());
  }
  std::vector<int> parents(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (is_root[i]) continue;
    int found = -1;
    for (std::size_t k = 0; k < n; ++k) {
      if (names[k] == parent_names[i]) found = static_cast<int>(k);
    }
    if (found < 0) {
      throw ParseError(joints.at(i).path() + ".parent: unknown joint '" + parent_names[i] + "'");
    }
    parents[i] = found;
  }
  try {
    return Skeleton(std::move(names), std::move(parents), std::move(offsets));
  } catch (const InvalidSkeleton& e) {
    throw InvalidSkeleton(where + ": " + e.what());
  }
}

inline Skeleton load_skeleton(const std::filesystem::path& path) {
  return skeleton_from_json(io_detail::parse_json(io_detail::read_file(path), path.string()), path.string());
}

inline void save_skeleton(const std::filesystem::path& path, const Skeleton& s) {
  io_detail::write_file(path, skeleton_to_json(s).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Motions.

inline Json quaternion_json(const Quaternion& q) { return Json::array({q.w, q.x, q.y, q.z}); }

inline Json motion_to_json(const MotionSequence& m) {
  Json frames = Json::array();
  for (const auto& f : m.frames) {
    Json rots = Json::array();
    for (const auto& q : f.rotations) rots.push_back(quaternion_json(q));
    frames.push_back({{"root", {{"velocity", io_detail::vec3_json(f.root.linear_velocity)}, {"yaw", f.root.yaw}}},
                      {"rotations", rots}});
  }
  return {{"fps", m.fps}, {"joints", m.joint_names}, {"frames", frames}};
}

// Unit within 1e-3: renormalized. Otherwise rejected.
inline Quaternion quaternion_from_json(const io_detail::Cursor& c) {
  const auto v = c.numbers(4);
  Quaternion q{v[0], v[1], v[2], v[3]};
  const double n = std::sqrt(quat_dot(q, q));
  if (std::abs(n - 1.0) > kQuaternionNormTolerance) {
    c.fail("quaternion norm " + std::to_string(n) + " is not within 1e-3 of 1");
  }
  return normalize(q);
}

inline MotionSequence motion_from_json(const Json& j, const std::string& where = "motion") {
  const io_detail::Cursor root(j, where);
  root.expect_object({"fps", "joints", "frames"});
  MotionSequence m;
  m.fps = root.at("fps").number();
  if (!(m.fps > 0.0)) root.at("fps").fail("fps must be positive");
  m.joint_names = root.at("joints").strings();
  const auto frames = root.at("frames");
  const std::size_t t_count = frames.array_size();
  if (t_count == 0) frames.fail("motion has no frames");
  for (std::size_t t = 0; t < t_count; ++t) {
    const auto f = frames.at(t);
    f.expect_object({"root", "rotations"});
    const auto r = f.at("root");
    r.expect_object({"velocity", "yaw"});
    MotionFrame frame;
    frame.root.linear_velocity = r.at("velocity").vec3();
    frame.root.yaw = r.at("yaw").number();
    const auto rots = f.at("rotations");
    if (rots.array_size() != m.joint_names.size()) {
      rots.fail("frame " + std::to_string(t) + " has " + std::to_string(rots.array_size()) +
                " rotations, expected " + std::to_string(m.joint_names.size()));
    }
    for (std::size_t k = 0; k < m.joint_names.size(); ++k) frame.rotations.push_back(quaternion_from_json(rots.at(k)));
    m.frames.push_back(std::move(frame));
  }
  return m;
}

inline MotionSequence load_motion(const std::filesystem::path& path) {
  return motion_from_json(io_detail::parse_json(io_detail::read_file(path), path.string()), path.string());
}

inline void save_motion(const std::filesystem::path& path, const MotionSequence& m) {
  io_detail::write_file(path, motion_to_json(m).dump() + "\n");
}

// ---------------------------------------------------------------------------
// Meshes.

struct ObjMesh {
  std::vector<Vec3d> vertices;
  std::vector<Triangle> triangles;
};

// OBJ subset. Face corners may carry texture/normal references ("v/t/n"),
// which are ignored; negative indices count back from the last vertex.
// Normals, texture coordinates, groups, materials and smoothing lines are
// skipped. Quads split as (0,1,2), (0,2,3).
inline ObjMesh parse_obj(const std::string& text, const std::string& where = "mesh") {
  ObjMesh m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  const auto fail = [&](const std::string& what) -> void {
    throw ParseError(where + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x = 0, y = 0, z = 0;
      if (!(ls >> x >> y >> z)) fail("vertex needs three coordinates");
      if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) fail("non-finite vertex");
      m.vertices.push_back({x, y, z});
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string corner;
      while (ls >> corner) {
        const std::string head = corner.substr(0, corner.find('/'));
        long long v = 0;
        try {
          std::size_t used = 0;
          v = std::stoll(head, &used);
          if (used != head.size()) fail("bad face index '" + corner + "'");
        } catch (const std::logic_error&) {
          fail("bad face index '" + corner + "'");
        }
        const auto nv = static_cast<long long>(m.vertices.size());
        const long long resolved = v > 0 ? v - 1 : nv + v;
        if (v == 0 || resolved < 0 || resolved >= nv) fail("face index " + std::to_string(v) + " out of range");
        idx.push_back(static_cast<int>(resolved));
      }
      if (idx.size() < 3) fail("face needs at least three vertices");
      if (idx.size() > 4) {
        throw InvalidRig(where + ":" + std::to_string(lineno) + ": unsupported face with " +
                         std::to_string(idx.size()) + " vertices");
      }
      m.triangles.push_back({idx[0], idx[1], idx[2]});
      if (idx.size() == 4) m.triangles.push_back({idx[0], idx[2], idx[3]});
    } else if (tag == "vn" || tag == "vt" || tag == "o" || tag == "g" || tag == "s" || tag == "usemtl" ||
               tag == "mtllib") {
      continue;
    } else {
      fail("unsupported OBJ statement '" + tag + "'");
    }
  }
  return m;
}

inline ObjMesh load_mesh_obj(const std::filesystem::path& path) {
  return parse_obj(io_detail::read_file(path), path.string());
}

inline std::string obj_text(std::span<const Vec3d> vertices, std::span<const Triangle> triangles) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& v : vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& t : triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  return out.str();
}

inline void save_mesh_obj(const std::filesystem::path& path, std::span<const Vec3d> vertices,
                          std::span<const Triangle> triangles) {
  io_detail::write_file(path, obj_text(vertices, triangles));
}

// ---------------------------------------------------------------------------
// Skin weights.

inline Json weights_to_json(const std::vector<std::vector<SkinWeight>>& weights, const Skeleton& s) {
  Json rows = Json::array();
  for (const auto& row : weights) {
    Json r = Json::object();
    for (const auto& w : row) r[s.joint_names()[static_cast<std::size_t>(w.joint)]] = w.weight;
    rows.push_back(r);
  }
  return {{"joints", s.joint_names()}, {"weights", rows}};
}

// Rows summing to within 0.05 of one are renormalized (and logged); rows
// further off are rejected. Zero weights are dropped.
inline std::vector<std::vector<SkinWeight>> weights_from_json(const Json& j, const Skeleton& s,
                                                              const std::string& where = "weights",
                                                              const LogFn& log = {}) {
  const io_detail::Cursor root(j, where);
  root.expect_object({"joints", "weights"});
  const auto names = root.at("joints").strings();
  if (names != s.joint_names()) root.at("joints").fail("joint list does not match the skeleton");
  const auto rows = root.at("weights");
  std::vector<std::vector<SkinWeight>> out;
  for (std::size_t v = 0, nv = rows.array_size(); v < nv; ++v) {
    const auto r = rows.at(v);
    if (!r.json().is_object()) r.fail("expected an object of joint weights");
    std::vector<SkinWeight> row;
    double sum = 0.0;
    for (auto it = r.json().begin(); it != r.json().end(); ++it) {
      const auto joint = s.find(it.key());
      if (!joint) throw InvalidRig(r.path() + ": unknown joint '" + it.key() + "'");
      const double w = io_detail::Cursor(it.value(), r.path() + "." + it.key()).number();
      if (w < 0.0) throw InvalidRig(r.path() + "." + it.key() + ": negative weight");
      if (w == 0.0) continue;
      row.push_back({*joint, w});
      sum += w;
    }
    if (std::abs(sum - 1.0) > kWeightSumTolerance) {
      throw InvalidRig(r.path() + ": weights sum to " + std::to_string(sum));
    }
    if (sum != 1.0) {
      for (auto& w : row) w.weight /= sum;
      if (log && std::abs(sum - 1.0) > 1e-6) {
        log(r.path() + ": weights summed to " + std::to_string(sum) + ", renormalized");
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

inline std::vector<std::vector<SkinWeight>> load_weights(const std::filesystem::path& path, const Skeleton& s,
                                                         const LogFn& log = {}) {
  return weights_from_json(io_detail::parse_json(io_detail::read_file(path), path.string()), s, path.string(), log);
}

inline void save_weights(const std::filesystem::path& path, const std::vector<std::vector<SkinWeight>>& weights,
                         const Skeleton& s) {
  io_detail::write_file(path, weights_to_json(weights, s).dump() + "\n");
}

// ---------------------------------------------------------------------------
// Character bundles.

inline Character load_character(const std::filesystem::path& bundle_path, const LogFn& log = {}) {
  const Json j = io_detail::parse_json(io_detail::read_file(bundle_path), bundle_path.string());
  const io_detail::Cursor root(j, bundle_path.string());
  root.expect_object({"name", "skeleton"}, {"mesh", "weights"});
  const auto dir = bundle_path.parent_path();
  Character c(root.at("name").string(), load_skeleton(dir / root.at("skeleton").string()));
  if (root.has("mesh") != root.has("weights")) root.fail("mesh and weights must be given together");
  if (root.has("mesh")) {
    const auto obj = load_mesh_obj(dir / root.at("mesh").string());
    SkinnedMesh mesh;
    mesh.vertices = obj.vertices;
    mesh.triangles = obj.triangles;
    mesh.weights = load_weights(dir / root.at("weights").string(), c.skeleton, log);
    if (mesh.weights.size() != mesh.vertices.size()) {
      throw InvalidRig(bundle_path.string() + ": weights cover " + std::to_string(mesh.weights.size()) +
                       " vertices, mesh has " + std::to_string(mesh.vertices.size()));
    }
    c.attach_mesh(std::move(mesh));
  }
  return c;
}

// Writes <dir>/<name>.json plus skeleton, mesh and weights files next to it.
inline std::filesystem::path save_character(const std::filesystem::path& dir, const Character& c) {
  std::filesystem::create_directories(dir);
  Json bundle = {{"name", c.name}, {"skeleton", c.name + ".skeleton.json"}};
  save_skeleton(dir / (c.name + ".skeleton.json"), c.skeleton);
  if (c.mesh) {
    bundle["mesh"] = c.name + ".obj";
    bundle["weights"] = c.name + ".weights.json";
    save_mesh_obj(dir / (c.name + ".obj"), c.mesh->vertices, c.mesh->triangles);
    save_weights(dir / (c.name + ".weights.json"), c.mesh->weights, c.skeleton);
  }
  const auto path = dir / (c.name + ".json");
  io_detail::write_file(path, bundle.dump(2) + "\n");
  return path;
}

// ---------------------------------------------------------------------------
// Checkpoints.

template <class Net>
std::string network_kind() {
  if constexpr (std::is_same_v<Net, SkeletonNet<double>>) return "skeleton";
  else if constexpr (std::is_same_v<Net, ShapeNets<double>>) return "shape";
  else return "gate";
}

inline Json net_config_json(const SkeletonNetConfig& c) {
  return {{"joints", c.joints}, {"token_channels", c.token_channels}, {"embedding_channels", c.embedding_channels},
          {"heads", c.heads}, {"hidden", c.hidden}};
}
inline Json net_config_json(const ShapeNetConfig& c) { return {{"joints", c.joints}, {"hidden", c.hidden}}; }
inline Json net_config_json(const GateNetConfig& c) { return {{"joints", c.joints}, {"hidden", c.hidden}}; }

inline SkeletonNetConfig skeleton_net_config(const io_detail::Cursor& c, SkeletonNetConfig out = {}) {
  c.expect_object({}, {"joints", "token_channels", "embedding_channels", "heads", "hidden"});
  if (c.has("joints")) out.joints = c.at("joints").unsigned_integer();
  if (c.has("token_channels")) out.token_channels = c.at("token_channels").unsigned_integer();
  if (c.has("embedding_channels")) out.embedding_channels = c.at("embedding_channels").unsigned_integer();
  if (c.has("heads")) out.heads = c.at("heads").unsigned_integer();
  if (c.has("hidden")) out.hidden = c.at("hidden").unsigned_integer();
  return out;
}

template <class C>
C small_net_config(const io_detail::Cursor& c, C out = {}) {
  c.expect_object({}, {"joints", "hidden"});
  if (c.has("joints")) out.joints = c.at("joints").unsigned_integer();
  if (c.has("hidden")) out.hidden = c.at("hidden").unsigned_integer();
  return out;
}

template <class Net>
std::string checkpoint_bytes(Net& net, std::uint64_t seed = 0) {
  Json tensors = Json::array();
  std::vector<double> flat;
  net.visit_params([&](const std::string& name, const Shape& shape, auto& data) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", flat.size()}, {"count", data.size()}});
    for (const auto& x : data) flat.push_back(value(x));
  });
  Json header = {{"format", "skinret-checkpoint"}, {"version", 1},     {"network", network_kind<Net>()},
                 {"seed", seed},                   {"dtype", "float64le"}, {"config", net_config_json(net.config)},
                 {"tensors", tensors}};
  if constexpr (requires { net.chains; }) header["chains"] = net.chains;
  const std::string h = header.dump();
  std::string out;
  io_detail::put_u64(out, h.size());
  out += h;
  for (double x : flat) io_detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
  return out;
}

template <class Net>
void save_checkpoint(const std::filesystem::path& path, Net& net, std::uint64_t seed = 0) {
  io_detail::write_file(path, checkpoint_bytes(net, seed));
}

struct CheckpointHeader {
  Json json;
  std::vector<double> values;
};

inline CheckpointHeader parse_checkpoint(const std::string& bytes, const std::string& where) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8) throw ParseError(where + ": truncated checkpoint");
  const std::uint64_t hl = io_detail::get_u64(p);
  if (hl > bytes.size() - 8) throw ParseError(where + ": header length exceeds file size");
  CheckpointHeader c;
  c.json = io_detail::parse_json(bytes.substr(8, hl), where + " header");
  const io_detail::Cursor h(c.json, where);
  h.expect_object({"format", "version", "network", "seed", "dtype", "config", "tensors"}, {"chains"});
  if (h.at("format").string() != "skinret-checkpoint") h.at("format").fail("not a skinret checkpoint");
  if (h.at("version").unsigned_integer() != 1) h.at("version").fail("unsupported version");
  if (h.at("dtype").string() != "float64le") h.at("dtype").fail("unsupported dtype");
  const std::size_t blob = bytes.size() - 8 - hl;
  if (blob % 8 != 0) throw ParseError(where + ": parameter blob is not a whole number of float64 values");
  for (std::size_t k = 0; k < blob / 8; ++k) {
    c.values.push_back(std::bit_cast<double>(io_detail::get_u64(p + 8 + hl + 8 * k)));
  }
  return c;
}

// Rebuilds the architecture from the header and checks the tensor table
// against it before copying values.
template <class Net>
Net load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  const auto c = parse_checkpoint(io_detail::read_file(path), where);
  const io_detail::Cursor h(c.json, where);
  if (h.at("network").string() != network_kind<Net>()) {
    h.at("network").fail("expected a " + network_kind<Net>() + " network, found " + h.at("network").string());
  }
  Net net;
  if constexpr (std::is_same_v<Net, SkeletonNet<double>>) {
    net = Net(skeleton_net_config(h.at("config")));
  } else if constexpr (std::is_same_v<Net, ShapeNets<double>>) {
    if (!h.has("chains")) h.fail("shape checkpoint without limb chains");
    std::array<std::vector<int>, 4> chains;
    const auto cc = h.at("chains");
    if (cc.array_size() != 4) cc.fail("expected four limb chains");
    for (std::size_t l = 0; l < 4; ++l) {
      for (std::size_t k = 0, n = cc.at(l).array_size(); k < n; ++k) {
        chains[l].push_back(static_cast<int>(cc.at(l).at(k).unsigned_integer()));
      }
    }
    net = Net(small_net_config<ShapeNetConfig>(h.at("config")), chains);
  } else {
    net = Net(small_net_config<GateNetConfig>(h.at("config")));
  }
  const auto tensors = h.at("tensors");
  std::size_t i = 0, offset = 0;
  net.visit_params([&](const std::string& name, const Shape& shape, auto& data) {
    if (i >= tensors.array_size()) tensors.fail("too few tensors");
    const auto t = tensors.at(i++);
    t.expect_object({"name", "shape", "offset", "count"});
    if (t.at("name").string() != name) t.at("name").fail("expected tensor '" + name + "'");
    if (t.at("shape").json() != Json(shape)) t.at("shape").fail("shape mismatch for '" + name + "'");
    if (t.at("offset").unsigned_integer() != offset || t.at("count").unsigned_integer() != data.size()) {
      t.fail("layout mismatch for '" + name + "'");
    }
    offset += data.size();
  });
  if (i != tensors.array_size()) tensors.fail("unexpected extra tensors");
  if (offset != c.values.size()) {
    throw ParseError(where + ": blob holds " + std::to_string(c.values.size()) + " values, expected " +
                     std::to_string(offset));
  }
  unflatten(net, std::span<const double>(c.values));
  return net;
}

// ---------------------------------------------------------------------------
// Training configuration.

inline Json config_to_json(const TrainConfig& c) {
  const auto& w = c.weights;
  return {{"seed", c.seed},
          {"adam", {{"learning_rate", c.adam.learning_rate}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2},
                    {"eps", c.adam.eps}}},
          {"iterations", c.iterations},
          {"stage2_iterations", c.stage2_iterations},
          {"batch", c.batch},
          {"window", c.window},
          {"self_probability", c.self_probability},
          {"joint_stage2", c.joint_stage2},
          {"weights", {{"lambda", w.lambda}, {"mu", w.mu}, {"nu", w.nu}, {"kappa", w.kappa}, {"iota", w.iota},
                       {"tau", w.tau}, {"alpha", w.alpha}}},
          {"fields", {{"spacing", c.fields.spacing}, {"repulsive_truncation", c.fields.repulsive_truncation},
                      {"attractive_truncation", c.fields.attractive_truncation}}},
          {"skeleton_net", net_config_json(c.skeleton_net)},
          {"shape_net", net_config_json(c.shape_net)},
          {"gate_net", net_config_json(c.gate_net)}};
}

// Keys present in `j` override `base`.
inline TrainConfig config_from_json(const Json& j, TrainConfig c = {}, const std::string& where = "config") {
  const io_detail::Cursor r(j, where);
  r.expect_object({}, {"seed", "adam", "iterations", "stage2_iterations", "batch", "window", "self_probability",
                       "joint_stage2", "weights", "fields", "skeleton_net", "shape_net", "gate_net"});
  const auto num = [](const io_detail::Cursor& p, const char* k, double& dst) {
    if (p.has(k)) dst = p.at(k).number();
  };
  const auto count = [](const io_detail::Cursor& p, const char* k, std::size_t& dst) {
    if (p.has(k)) dst = p.at(k).unsigned_integer();
  };
  if (r.has("seed")) c.seed = r.at("seed").unsigned_integer();
  if (r.has("adam")) {
    const auto a = r.at("adam");
    a.expect_object({}, {"learning_rate", "beta1", "beta2", "eps"});
    num(a, "learning_rate", c.adam.learning_rate);
    num(a, "beta1", c.adam.beta1);
    num(a, "beta2", c.adam.beta2);
    num(a, "eps", c.adam.eps);
  }
  count(r, "iterations", c.iterations);
  count(r, "stage2_iterations", c.stage2_iterations);
  count(r, "batch", c.batch);
  count(r, "window", c.window);
  num(r, "self_probability", c.self_probability);
  if (r.has("joint_stage2")) c.joint_stage2 = r.at("joint_stage2").boolean();
  if (r.has("weights")) {
    const auto w = r.at("weights");
    w.expect_object({}, {"lambda", "mu", "nu", "kappa", "iota", "tau", "alpha"});
    num(w, "lambda", c.weights.lambda);
    num(w, "mu", c.weights.mu);
    num(w, "nu", c.weights.nu);
    num(w, "kappa", c.weights.kappa);
    num(w, "iota", c.weights.iota);
    num(w, "tau", c.weights.tau);
    num(w, "alpha", c.weights.alpha);
  }
  if (r.has("fields")) {
    const auto f = r.at("fields");
    f.expect_object({}, {"spacing", "repulsive_truncation", "attractive_truncation"});
    num(f, "spacing", c.fields.spacing);
    num(f, "repulsive_truncation", c.fields.repulsive_truncation);
    num(f, "attractive_truncation", c.fields.attractive_truncation);
  }
  if (r.has("skeleton_net")) c.skeleton_net = skeleton_net_config(r.at("skeleton_net"), c.skeleton_net);
  if (r.has("shape_net")) c.shape_net = small_net_config(r.at("shape_net"), c.shape_net);
  if (r.has("gate_net")) c.gate_net = small_net_config(r.at("gate_net"), c.gate_net);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

inline TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {}) {
  return config_from_json(io_detail::parse_json(io_detail::read_file(path), path.string()), base, path.string());
}

// ---------------------------------------------------------------------------
// Field dumps.

inline Json field_header(const VoxelField& f) {
  return {{"origin", io_detail::vec3_json(f.origin)},
          {"spacing", f.spacing},
          {"dims", f.dims},
          {"kind", std::string(field_kind_name(f.kind))},
          {"truncation", f.truncation},
          {"dtype", "float32le"},
          {"order", "x fastest, then y, then z"}};
}

// Writes <stem>.raw and <stem>.json.
inline void save_field(const std::filesystem::path& stem, const VoxelField& f) {
  std::string raw;
  raw.reserve(f.values.size() * 4);
  for (double v : f.values) io_detail::put_u32(raw, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  auto raw_path = stem;
  raw_path += ".raw";
  auto json_path = stem;
  json_path += ".json";
  Json h = field_header(f);
  h["data"] = raw_path.filename().string();
  io_detail::write_file(raw_path, raw);
  io_detail::write_file(json_path, h.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Tables and reports.

inline std::string csv_number(double x) {
  std::ostringstream s;
  s.precision(17);
  s << x;
  return s.str();
}

inline std::string loss_curve_csv(const LossCurve& curve) {
  std::string out = "iteration";
  for (const auto& n : loss_term_names()) out += "," + n;
  out += "\n";
  for (const auto& r : curve.rows) {
    out += std::to_string(static_cast<std::size_t>(r[0]));
    for (std::size_t k = 1; k < r.size(); ++k) out += "," + csv_number(r[k]);
    out += "\n";
  }
  return out;
}

inline std::string trace_csv(const std::string& joint, const std::vector<double>& heights) {
  std::string out = "frame," + joint + "_height\n";
  for (std::size_t t = 0; t < heights.size(); ++t) out += std::to_string(t) + "," + csv_number(heights[t]) + "\n";
  return out;
}

inline void save_text(const std::filesystem::path& path, const std::string& text) { io_detail::write_file(path, text); }

// Contact distances are reported in centimeters (characters are in meters).
inline Json eval_report_json(const EvalReport& r) {
  Json j = {{"mse", nullptr}, {"local_mse", nullptr}, {"penetration_rate", nullptr}, {"contact_distance_cm", nullptr}};
  Json per = Json::object();
  if (r.mse) {
    j["mse"] = r.mse->mse;
    j["local_mse"] = r.mse->local_mse;
    per["mse"] = r.mse->per_frame;
  }
  if (r.penetration) {
    j["penetration_rate"] = r.penetration->mean;
    per["penetration_rate"] = r.penetration->per_frame;
  }
  if (r.contact) {
    j["contact_distance_cm"] = 100.0 * r.contact->mean;
    std::vector<double> cm;
    for (double x : r.contact->per_frame) cm.push_back(100.0 * x);
    per["contact_distance_cm"] = cm;
  }
  j["per_frame"] = per;
  return j;
}

}  // namespace skinret
