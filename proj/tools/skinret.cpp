// Command line front end: retarget, train, eval, voxelize, trace, serve and
// synth (toy characters and motions).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"
#include "skinret/io.hpp"
#include "skinret/metrics.hpp"
#include "skinret/service.hpp"
#include "skinret/synthetic.hpp"
#include "skinret/training.hpp"

namespace fs = std::filesystem;
using namespace skinret;

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    out.push_back(std::stod(item, &used));
    if (used != item.size()) throw ValidationError("bad number '" + item + "' in list");
  }
  return out;
}

NetworkSet load_networks(const std::string& skel, const std::string& shape, const std::string& gate) {
  NetworkSet n;
  if (!skel.empty()) n.skeleton = load_checkpoint<SkeletonNet<double>>(skel);
  if (!shape.empty()) n.shape = load_checkpoint<ShapeNets<double>>(shape);
  if (!gate.empty()) n.gate = load_checkpoint<GateNet<double>>(gate);
  return n;
}

// Flags given on the command line override the config file.
struct TrainFlags {
  std::string config;
  std::vector<std::string> characters;
  std::vector<std::string> motions;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
  std::optional<double> learning_rate;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> window;
  bool joint = false;

  TrainConfig resolve(bool stage2) const {
    TrainConfig c = config.empty() ? TrainConfig{} : load_config(config);
    if (seed) c.seed = *seed;
    if (iterations) (stage2 ? c.stage2_iterations : c.iterations) = *iterations;
    if (learning_rate) c.adam.learning_rate = *learning_rate;
    if (batch) c.batch = *batch;
    if (window) c.window = *window;
    if (joint) c.joint_stage2 = true;
    c.validate();
    return c;
  }

  TrainingData data() const {
    TrainingData d;
    for (const auto& p : characters) d.characters.push_back(load_character(p, warn));
    for (const auto& p : motions) d.motions.push_back(load_motion(p));
    return d;
  }
};

void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--config", f.config, "training config JSON")->check(CLI::ExistingFile);
  app->add_option("--character", f.characters, "character bundle (repeatable)")->required();
  app->add_option("--motion", f.motions, "motion JSON (repeatable)")->required();
  app->add_option("--seed", f.seed);
  app->add_option("--iterations", f.iterations);
  app->add_option("--learning-rate", f.learning_rate);
  app->add_option("--batch", f.batch);
  app->add_option("--window", f.window);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skinret: skinned motion retargeting"};
  app.require_subcommand(1);

  // retarget
  auto* rt = app.add_subcommand("retarget", "retarget a motion onto a target character");
  std::string rt_motion, rt_source, rt_target, rt_out, rt_skel, rt_shape, rt_gate, rt_override, rt_frames;
  double rt_scale = 1.0;
  bool rt_skeleton_only = false;
  rt->add_option("--motion", rt_motion, "source motion JSON")->required()->check(CLI::ExistingFile);
  rt->add_option("--source", rt_source, "source character bundle")->required()->check(CLI::ExistingFile);
  rt->add_option("--target", rt_target, "target character bundle")->required()->check(CLI::ExistingFile);
  rt->add_option("--out", rt_out, "output motion JSON")->required();
  rt->add_option("--skeleton-net", rt_skel, "stage-1 checkpoint");
  rt->add_option("--shape-net", rt_shape, "stage-2 shape checkpoint");
  rt->add_option("--gate-net", rt_gate, "stage-2 gate checkpoint");
  rt->add_option("--w-override", rt_override, "comma-separated per-joint weights in [0, 1]");
  rt->add_option("--w-scale", rt_scale, "scale applied to the network weights");
  rt->add_option("--frames-out", rt_frames, "per-frame intermediates JSON");
  rt->add_flag("--skeleton-only", rt_skeleton_only, "skip the geometry stage");

  // train
  auto* tr = app.add_subcommand("train", "train the networks");
  tr->require_subcommand(1);
  auto* s1 = tr->add_subcommand("stage1", "skeleton-aware network");
  auto* s2 = tr->add_subcommand("stage2", "shape-aware networks and gate (skeleton network frozen)");
  TrainFlags f1, f2;
  std::string s1_out, s1_curve, s2_skel, s2_shape_out, s2_gate_out, s2_curve;
  add_train_flags(s1, f1);
  s1->add_option("--out", s1_out, "checkpoint path")->required();
  s1->add_option("--curve", s1_curve, "loss curve CSV");
  add_train_flags(s2, f2);
  s2->add_option("--skeleton-net", s2_skel, "stage-1 checkpoint")->required()->check(CLI::ExistingFile);
  s2->add_option("--shape-out", s2_shape_out, "shape checkpoint path")->required();
  s2->add_option("--gate-out", s2_gate_out, "gate checkpoint path")->required();
  s2->add_option("--curve", s2_curve, "loss curve CSV prefix");
  s2->add_flag("--joint", f2.joint, "optimize shape and gate jointly");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluation metrics for a retargeted motion");
  std::string ev_result, ev_character, ev_reference, ev_out;
  bool ev_no_mesh = false;
  ev->add_option("--result", ev_result, "retargeted motion JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--character", ev_character, "target character bundle")->required()->check(CLI::ExistingFile);
  ev->add_option("--reference", ev_reference, "reference motion for MSE")->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "report JSON (stdout if omitted)");
  ev->add_flag("--skip-geometry", ev_no_mesh, "skip penetration and contact");

  // voxelize
  auto* vx = app.add_subcommand("voxelize", "dump the distance fields of a posed character");
  std::string vx_character, vx_motion, vx_out;
  std::size_t vx_frame = 0;
  FieldSettings vx_fields;
  vx->add_option("--character", vx_character, "character bundle")->required()->check(CLI::ExistingFile);
  vx->add_option("--motion", vx_motion, "motion JSON (rest pose if omitted)")->check(CLI::ExistingFile);
  vx->add_option("--frame", vx_frame);
  vx->add_option("--spacing", vx_fields.spacing, "grid spacing relative to height");
  vx->add_option("--repulsive-truncation", vx_fields.repulsive_truncation, "relative to height");
  vx->add_option("--attractive-truncation", vx_fields.attractive_truncation, "relative to height");
  vx->add_option("--out", vx_out, "output stem; writes <stem>.<kind>.raw/.json")->required();

  // trace
  auto* tc = app.add_subcommand("trace", "per-frame height of one joint as CSV");
  std::string tc_motion, tc_character, tc_joint = "LeftHand", tc_out;
  tc->add_option("--motion", tc_motion)->required()->check(CLI::ExistingFile);
  tc->add_option("--character", tc_character)->required()->check(CLI::ExistingFile);
  tc->add_option("--joint", tc_joint);
  tc->add_option("--out", tc_out, "CSV path (stdout if omitted)");

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP service for the viewer");
  std::vector<std::string> sv_characters, sv_motions;
  std::string sv_skel, sv_shape, sv_gate, sv_host = "127.0.0.1";
  int sv_port = 8080;
  sv->add_option("--character", sv_characters, "character bundle (repeatable)")->required();
  sv->add_option("--motion", sv_motions, "name=source_character:path (repeatable)");
  sv->add_option("--skeleton-net", sv_skel);
  sv->add_option("--shape-net", sv_shape);
  sv->add_option("--gate-net", sv_gate);
  sv->add_option("--host", sv_host);
  sv->add_option("--port", sv_port);

  // synth
  auto* sy = app.add_subcommand("synth", "write a toy character family and motions");
  std::string sy_family = "armfold", sy_out, sy_style;
  std::size_t sy_frames = 64, sy_count = 1;
  std::uint64_t sy_seed = 1;
  sy->add_option("--family", sy_family, "armfold or penetration");
  sy->add_option("--out", sy_out, "output directory")->required();
  sy->add_option("--frames", sy_frames);
  sy->add_option("--motions", sy_count, "number of motions");
  sy->add_option("--seed", sy_seed);
  sy->add_option("--style", sy_style, "armfold or hug (defaults by family)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (rt->parsed()) {
      const auto source = load_character(rt_source, warn);
      const auto target = load_character(rt_target, warn);
      const auto motion = load_motion(rt_motion);
      const auto nets = load_networks(rt_skel, rt_shape, rt_gate);
      RetargetRequest req;
      req.motion = &motion;
      req.source = &source.skeleton;
      req.target = &target;
      req.networks = &nets;
      req.geometry = !rt_skeleton_only;
      if (!rt_override.empty()) req.control.w_override = parse_list(rt_override);
      req.control.w_scale = rt_scale;
      const auto result = retarget_sequence(req);
      save_motion(rt_out, result.motion);
      if (!rt_frames.empty()) {
        Json frames = Json::array();
        for (const auto& f : result.frames) {
          Json q_sem = Json::array(), q_geo = Json::array();
          for (const auto& q : f.q_sem) q_sem.push_back(quaternion_json(q));
          for (const auto& q : f.q_geo) q_geo.push_back(quaternion_json(q));
          frames.push_back({{"q_sem", q_sem}, {"q_geo", q_geo}, {"w_network", f.w_network}, {"w", f.w}});
        }
        save_text(rt_frames, Json{{"frames", frames}}.dump() + "\n");
      }
      return 0;
    }
    if (s1->parsed()) {
      const auto cfg = f1.resolve(false);
      const auto data = f1.data();
      const auto r = train_stage1(cfg, data, [&](std::size_t it, const std::vector<double>& t) {
        if (it % 50 == 0 || it + 1 == cfg.iterations) std::cerr << "stage1 " << it << " loss " << t[0] << "\n";
      });
      auto net = r.net;
      save_checkpoint(s1_out, net, cfg.seed);
      if (!s1_curve.empty()) save_text(s1_curve, loss_curve_csv(r.curve));
      return 0;
    }
    if (s2->parsed()) {
      const auto cfg = f2.resolve(true);
      const auto data = f2.data();
      auto skeleton = load_checkpoint<SkeletonNet<double>>(s2_skel);
      auto r = train_stage2(cfg, data, skeleton,
                            [&](const std::string& stage, std::size_t it, const std::vector<double>& t) {
                              if (it % 50 == 0) std::cerr << stage << " " << it << " loss " << t[0] << "\n";
                            });
      if (r.skeleton_checksum_before != r.skeleton_checksum_after) {
        throw DivergenceError("skeleton network changed during stage 2");
      }
      save_checkpoint(s2_shape_out, r.shape, cfg.seed);
      save_checkpoint(s2_gate_out, r.gate, cfg.seed);
      if (!s2_curve.empty()) {
        save_text(s2_curve + ".geometry.csv", loss_curve_csv(r.geometry_curve));
        save_text(s2_curve + ".gate.csv", loss_curve_csv(r.gate_curve));
      }
      return 0;
    }
    if (ev->parsed()) {
      const auto c = load_character(ev_character, warn);
      const auto result = load_motion(ev_result);
      result.validate(c.skeleton);
      EvalReport report;
      if (!ev_reference.empty()) report.mse = eval_mse(result, load_motion(ev_reference), c.skeleton);
      if (!ev_no_mesh) {
        report.penetration = eval_penetration(result, c);
        report.contact = eval_contact(result, c);
      }
      const std::string text = eval_report_json(report).dump(2) + "\n";
      if (ev_out.empty()) {
        std::cout << text;
      } else {
        save_text(ev_out, text);
      }
      return 0;
    }
    if (vx->parsed()) {
      vx_fields.validate();
      const auto c = load_character(vx_character, warn);
      if (!c.mesh) throw ConfigError("character has no mesh");
      std::vector<Quaternion> pose(c.skeleton.size(), Quaternion::identity());
      if (!vx_motion.empty()) {
        const auto m = load_motion(vx_motion);
        m.validate(c.skeleton);
        if (vx_frame >= m.num_frames()) throw ValidationError("frame index out of range");
        pose = m.frames[vx_frame].rotations;
      }
      const GeometryScene scene(c.skeleton, *c.mesh);
      const auto body = scene.posed_body(pose);
      const double h = c.skeleton.height();
      const auto fields = voxelize_both(body, scene.body.triangles, vx_fields.spacing * h,
                                        vx_fields.repulsive_truncation * h, vx_fields.attractive_truncation * h);
      save_field(vx_out + ".repulsive", fields.repulsive);
      save_field(vx_out + ".attractive", fields.attractive);
      return 0;
    }
    if (tc->parsed()) {
      const auto c = load_character(tc_character, warn);
      const auto m = load_motion(tc_motion);
      m.validate(c.skeleton);
      const std::string text = trace_csv(tc_joint, end_effector_trace(m, c.skeleton, tc_joint));
      if (tc_out.empty()) {
        std::cout << text;
      } else {
        save_text(tc_out, text);
      }
      return 0;
    }
    if (sv->parsed()) {
      ServiceAssets assets;
      for (const auto& p : sv_characters) {
        auto c = load_character(p, warn);
        const std::string name = c.name;
        assets.characters.emplace(name, std::move(c));
      }
      for (const auto& spec : sv_motions) {
        const auto eq = spec.find('=');
        const auto colon = spec.find(':', eq == std::string::npos ? 0 : eq);
        if (eq == std::string::npos || colon == std::string::npos) {
          throw ConfigError("--motion expects name=source_character:path, got '" + spec + "'");
        }
        assets.motions.emplace(spec.substr(0, eq), std::make_pair(spec.substr(eq + 1, colon - eq - 1),
                                                                  load_motion(spec.substr(colon + 1))));
      }
      assets.networks = load_networks(sv_skel, sv_shape, sv_gate);
      const RetargetService service(std::move(assets));
      httplib::Server server;
      service.bind(server);
      std::cerr << "listening on " << sv_host << ":" << sv_port << "\n";
      if (!server.listen(sv_host, sv_port)) throw ConfigError("cannot listen on port " + std::to_string(sv_port));
      return 0;
    }
    if (sy->parsed()) {
      const auto family = family_by_name(sy_family);
      if (sy_frames == 0 || sy_count == 0) throw ConfigError("frames and motions must be positive");
      MotionStyle style = sy_family == "penetration" ? MotionStyle::kHug : MotionStyle::kArmFold;
      if (sy_style == "hug") style = MotionStyle::kHug;
      else if (sy_style == "armfold") style = MotionStyle::kArmFold;
      else if (!sy_style.empty()) throw ConfigError("unknown style '" + sy_style + "'");
      fs::create_directories(sy_out);
      std::optional<Skeleton> first;
      for (const auto& params : family) {
        const auto c = make_character(params);
        if (!first) first = c.skeleton;
        std::cout << save_character(sy_out, c).string() << "\n";
      }
      for (std::size_t k = 0; k < sy_count; ++k) {
        MotionParams mp;
        mp.style = style;
        mp.frames = sy_frames;
        mp.seed = sy_seed + k;
        const auto path = fs::path(sy_out) / ("motion" + std::to_string(k) + ".json");
        save_motion(path, make_motion(*first, mp));
        std::cout << path.string() << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
