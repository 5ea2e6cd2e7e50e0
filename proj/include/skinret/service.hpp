#pragma once

// HTTP/JSON service for interactive inspection.
//
//   GET  /characters                       character and motion catalog
//   GET  /sequence?src=&tgt=&motion=       retargeted frames with q_sem, q_geo, w and the target mesh
//   POST /rebalance {snapshot, frame_range?, w_override? | w_scale?}
//                                          frames re-interpolated from cached q_sem/q_geo
//   GET  /mesh?character=                  rest mesh, triangles, weights, part labels
//
// A snapshot id "src:tgt:motion" names one retargeted sequence. Assets and
// networks are fixed at construction; sequences are computed once and then
// shared read-only between requests.

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include "httplib.h"
#include "skinret/io.hpp"
#include "skinret/pipeline.hpp"

namespace skinret {

struct ServiceResponse {
  int status = 200;
  std::string body;
};

struct ServiceAssets {
  std::map<std::string, Character> characters;
  // Each motion is played by its source character.
  std::map<std::string, std::pair<std::string, MotionSequence>> motions;
  NetworkSet networks;
};

class RetargetService {
 public:
  explicit RetargetService(ServiceAssets assets) : assets_(std::move(assets)) {
    for (const auto& [name, m] : assets_.motions) {
      const auto it = assets_.characters.find(m.first);
      if (it == assets_.characters.end()) {
        throw ConfigError("motion '" + name + "' names unknown character '" + m.first + "'");
      }
      m.second.validate(it->second.skeleton);
    }
  }

  ServiceResponse characters() const {
    Json chars = Json::array();
    for (const auto& [name, c] : assets_.characters) {
      chars.push_back({{"name", name},
                       {"joints", c.skeleton.joint_names()},
                       {"height", c.skeleton.height()},
                       {"has_mesh", c.mesh.has_value()}});
    }
    Json motions = Json::array();
    for (const auto& [name, m] : assets_.motions) {
      motions.push_back({{"name", name}, {"source", m.first}, {"frames", m.second.num_frames()}, {"fps", m.second.fps}});
    }
    return ok({{"characters", chars}, {"motions", motions}});
  }

  ServiceResponse sequence(const std::string& src, const std::string& tgt, const std::string& motion) const {
    try {
      const auto seq = snapshot(src, tgt, motion);
      const auto& target = assets_.characters.at(tgt);
      Json frames = Json::array();
      for (std::size_t t = 0; t < seq->frames.size(); ++t) {
        const auto& f = seq->frames[t];
        frames.push_back({{"index", t},
                          {"root", {{"velocity", io_detail::vec3_json(seq->motion.frames[t].root.linear_velocity)},
                                    {"yaw", seq->motion.frames[t].root.yaw}}},
                          {"q_copy", quats(f.q_copy)},
                          {"q_sem", quats(f.q_sem)},
                          {"q_geo", quats(f.q_geo)},
                          {"w_network", f.w_network},
                          {"w", f.w},
                          {"q_b", quats(f.q_b)}});
      }
      Json body = {{"snapshot", snapshot_id(src, tgt, motion)},
                   {"source", src},
                   {"target", tgt},
                   {"motion", motion},
                   {"fps", seq->motion.fps},
                   {"skeleton", skeleton_to_json(target.skeleton)},
                   {"frames", frames},
                   {"mesh", target.mesh ? mesh_json(target) : Json(nullptr)}};
      return ok(body);
    } catch (const NotFound& e) {
      return error(404, "not_found", e.what());
    } catch (const Error& e) {
      return error(400, "validation", e.what());
    }
  }

  ServiceResponse rebalance(const std::string& request_body) const {
    try {
      const Json j = io_detail::parse_json(request_body, "request");
      const io_detail::Cursor r(j, "request");
      r.expect_object({"snapshot"}, {"frame_range", "w_override", "w_scale"});
      const std::string id = r.at("snapshot").string();
      const auto parts = split_snapshot(id);
      const auto seq = snapshot(parts[0], parts[1], parts[2]);
      const std::size_t t_count = seq->frames.size();
      std::size_t begin = 0, end = t_count;
      if (r.has("frame_range")) {
        const auto fr = r.at("frame_range");
        if (fr.array_size() != 2) fr.fail("expected [begin, end)");
        begin = fr.at(std::size_t{0}).unsigned_integer();
        end = fr.at(std::size_t{1}).unsigned_integer();
        if (!(begin < end && end <= t_count)) {
          fr.fail("frame range must satisfy 0 <= begin < end <= " + std::to_string(t_count));
        }
      }
      if (r.has("w_override") && r.has("w_scale")) r.fail("give w_override or w_scale, not both");
      WControl control;
      if (r.has("w_override")) {
        const auto wo = r.at("w_override");
        std::vector<double> w;
        for (std::size_t k = 0, n = wo.array_size(); k < n; ++k) w.push_back(wo.at(k).number());
        control.w_override = std::move(w);
      }
      if (r.has("w_scale")) control.w_scale = r.at("w_scale").number();
      Json frames = Json::array();
      for (std::size_t t = begin; t < end; ++t) {
        const auto f = rebalance_frame(seq->frames[t], control);
        frames.push_back({{"index", t}, {"w", f.w}, {"q_b", quats(f.q_b)}});
      }
      return ok({{"snapshot", id}, {"frame_range", {begin, end}}, {"frames", frames}});
    } catch (const NotFound& e) {
      return error(404, "not_found", e.what());
    } catch (const Error& e) {
      return error(400, "validation", e.what());
    }
  }

  ServiceResponse mesh(const std::string& name) const {
    const auto it = assets_.characters.find(name);
    if (it == assets_.characters.end()) return error(404, "not_found", "unknown character '" + name + "'");
    if (!it->second.mesh) return error(404, "not_found", "character '" + name + "' has no mesh");
    Json body = mesh_json(it->second);
    body["name"] = name;
    return ok(body);
  }

  // Retargeted sequence for a snapshot, computed on first use.
  std::shared_ptr<const RetargetResult> snapshot(const std::string& src, const std::string& tgt,
                                                 const std::string& motion) const {
    const auto s = assets_.characters.find(src);
    if (s == assets_.characters.end()) throw NotFound("unknown character '" + src + "'");
    const auto t = assets_.characters.find(tgt);
    if (t == assets_.characters.end()) throw NotFound("unknown character '" + tgt + "'");
    const auto m = assets_.motions.find(motion);
    if (m == assets_.motions.end()) throw NotFound("unknown motion '" + motion + "'");
    if (m->second.first != src) {
      throw ValidationError("motion '" + motion + "' belongs to character '" + m->second.first + "'");
    }
    const std::string id = snapshot_id(src, tgt, motion);
    {
      std::lock_guard lock(mutex_);
      const auto hit = cache_.find(id);
      if (hit != cache_.end()) return hit->second;
    }
    RetargetRequest req;
    req.motion = &m->second.second;
    req.source = &s->second.skeleton;
    req.target = &t->second;
    req.networks = &assets_.networks;
    req.geometry = t->second.mesh.has_value();
    auto result = std::make_shared<const RetargetResult>(retarget_sequence(req));
    std::lock_guard lock(mutex_);
    return cache_.emplace(id, std::move(result)).first->second;
  }

  static std::string snapshot_id(const std::string& src, const std::string& tgt, const std::string& motion) {
    return src + ":" + tgt + ":" + motion;
  }

  void bind(httplib::Server& server) const {
    const auto send = [](httplib::Response& res, const ServiceResponse& r) {
      res.status = r.status;
      res.set_content(r.body, "application/json");
    };
    server.Get("/characters", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, characters());
    });
    server.Get("/sequence", [this, send](const httplib::Request& req, httplib::Response& res) {
      for (const char* k : {"src", "tgt", "motion"}) {
        if (!req.has_param(k)) {
          send(res, error(400, "validation", std::string("missing query parameter '") + k + "'"));
          return;
        }
      }
      send(res, sequence(req.get_param_value("src"), req.get_param_value("tgt"), req.get_param_value("motion")));
    });
    server.Post("/rebalance", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, rebalance(req.body));
    });
    server.Get("/mesh", [this, send](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("character")) {
        send(res, error(400, "validation", "missing query parameter 'character'"));
        return;
      }
      send(res, mesh(req.get_param_value("character")));
    });
  }

 private:
  class NotFound : public Error {
   public:
    using Error::Error;
  };

  static ServiceResponse ok(const Json& j) { return {200, j.dump()}; }
  static ServiceResponse error(int status, const std::string& kind, const std::string& reason) {
    return {status, Json{{"error", kind}, {"reason", reason}}.dump()};
  }

  static Json quats(const std::vector<Quaternion>& q) {
    Json out = Json::array();
    for (const auto& x : q) out.push_back(quaternion_json(x));
    return out;
  }

  static Json mesh_json(const Character& c) {
    const auto& m = *c.mesh;
    Json verts = Json::array();
    for (const auto& v : m.vertices) verts.push_back(io_detail::vec3_json(v));
    Json parts = Json::array();
    for (auto p : m.parts) parts.push_back(std::string(part_name(p)));
    return {{"vertices", verts},
            {"triangles", m.triangles},
            {"weights", weights_to_json(m.weights, c.skeleton)["weights"]},
            {"parts", parts}};
  }

  static std::array<std::string, 3> split_snapshot(const std::string& id) {
    const auto a = id.find(':');
    const auto b = a == std::string::npos ? a : id.find(':', a + 1);
    if (b == std::string::npos || id.find(':', b + 1) != std::string::npos) {
      throw ValidationError("snapshot id must have the form src:tgt:motion");
    }
    return {id.substr(0, a), id.substr(a + 1, b - a - 1), id.substr(b + 1)};
  }

  ServiceAssets assets_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::shared_ptr<const RetargetResult>> cache_;
};

}  // namespace skinret
