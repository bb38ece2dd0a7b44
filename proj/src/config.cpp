#include "groupflow/config.hpp"

#include <set>

#include <json.hpp>

#include "groupflow/io.hpp"

namespace groupflow {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::Format, "config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw Error(ErrorKind::Format, "config: unknown key '" + where + key + "'");
  }
}

template <class T>
void read_opt(const json& obj, const char* key, T& out) {
  if (obj.contains(key) && !obj.at(key).is_null()) out = obj.at(key).get<T>();
}

std::string residual_name(ResidualMode m) { return m == ResidualMode::PerBlock ? "per-block" : "first-to-last"; }

ResidualMode parse_residual(const std::string& s) {
  if (s == "per-block") return ResidualMode::PerBlock;
  if (s == "first-to-last") return ResidualMode::FirstToLast;
  throw Error(ErrorKind::Format, "config: residual must be 'per-block' or 'first-to-last'");
}

Dims parse_dims(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorKind::Format, "config: " + what + " must be three integers");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Format, std::string("config: invalid JSON: ") + e.what());
  }
  try {
    check_keys(doc, {"version", "preset", "group", "seed", "iterations", "lr", "eval_grid", "network", "flow",
                     "post_scale", "loss", "synth"},
               "");
    if (!doc.contains("version")) throw Error(ErrorKind::Format, "config: missing 'version'");
    if (doc.at("version").get<int>() != kConfigVersion) {
      throw Error(ErrorKind::Unsupported, "config: unsupported version " + doc.at("version").dump());
    }
    RunConfig cfg;
    GroupKind group = GroupKind::SE3;
    if (doc.contains("group")) group = parse_group_kind(doc.at("group").get<std::string>());
    read_opt(doc, "preset", cfg.preset);
    cfg.registration = preset(parse_experiment(cfg.preset), group);
    auto& r = cfg.registration;
    read_opt(doc, "seed", r.seed);
    read_opt(doc, "iterations", r.iterations);
    read_opt(doc, "lr", r.lr);
    if (doc.contains("eval_grid")) {
      if (doc.at("eval_grid").is_null()) {
        r.eval_grid.reset();
      } else {
        r.eval_grid = parse_dims(doc.at("eval_grid"), "eval_grid");
      }
    }
    if (doc.contains("network")) {
      const json& n = doc.at("network");
      check_keys(n, {"hidden_dim", "n_blocks", "w0", "residual"}, "network.");
      read_opt(n, "hidden_dim", r.siren.hidden_dim);
      read_opt(n, "n_blocks", r.siren.n_blocks);
      read_opt(n, "w0", r.siren.w0);
      if (n.contains("residual")) r.siren.residual = parse_residual(n.at("residual").get<std::string>());
    }
    if (doc.contains("flow")) {
      const json& f = doc.at("flow");
      check_keys(f, {"n_squarings"}, "flow.");
      read_opt(f, "n_squarings", r.flow.n_squarings);
    }
    if (doc.contains("post_scale")) {
      const json& p = doc.at("post_scale");
      check_keys(p, {"translational", "rotational", "scale"}, "post_scale.");
      read_opt(p, "translational", r.post_scale.translational);
      read_opt(p, "rotational", r.post_scale.rotational);
      read_opt(p, "scale", r.post_scale.scale_channel);
    }
    if (doc.contains("loss")) {
      const json& l = doc.at("loss");
      check_keys(l, {"ncc_eps", "fold_eps", "fold_weight", "grad_weight", "hess_weight", "bidirectional"}, "loss.");
      read_opt(l, "ncc_eps", r.loss.ncc_eps);
      read_opt(l, "fold_eps", r.loss.fold_eps);
      read_opt(l, "fold_weight", r.loss.fold_weight);
      read_opt(l, "grad_weight", r.loss.grad_weight);
      read_opt(l, "hess_weight", r.loss.hess_weight);
      read_opt(l, "bidirectional", r.loss.bidirectional);
    }
    if (doc.contains("synth")) {
      const json& s = doc.at("synth");
      check_keys(s, {"control_grid", "max_angle", "max_translation", "max_perturbation", "noise_sigma",
                     "rotation_scale", "translation_scale", "pad_fraction", "seed"},
                 "synth.");
      auto& sc = cfg.synth;
      if (s.contains("control_grid")) sc.control_grid = parse_dims(s.at("control_grid"), "synth.control_grid");
      read_opt(s, "max_angle", sc.max_angle);
      read_opt(s, "max_translation", sc.max_translation);
      read_opt(s, "max_perturbation", sc.max_perturbation);
      read_opt(s, "noise_sigma", sc.noise_sigma);
      read_opt(s, "rotation_scale", sc.rotation_scale);
      read_opt(s, "translation_scale", sc.translation_scale);
      read_opt(s, "pad_fraction", sc.pad_fraction);
      read_opt(s, "seed", sc.seed);
    }
    cfg.registration = cfg.registration.normalized();
    cfg.registration.validate();
    cfg.synth.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("config: ") + e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

std::string dump_config(const RunConfig& cfg) {
  const auto& r = cfg.registration;
  json doc;
  doc["version"] = kConfigVersion;
  doc["preset"] = cfg.preset;
  doc["group"] = std::string(to_string(r.group));
  doc["seed"] = r.seed;
  doc["iterations"] = r.iterations;
  doc["lr"] = r.lr;
  doc["eval_grid"] = r.eval_grid ? json::array({(*r.eval_grid)[0], (*r.eval_grid)[1], (*r.eval_grid)[2]}) : json(nullptr);
  doc["network"] = {{"hidden_dim", r.siren.hidden_dim},
                    {"n_blocks", r.siren.n_blocks},
                    {"w0", r.siren.w0},
                    {"residual", residual_name(r.siren.residual)}};
  doc["flow"] = {{"n_squarings", r.flow.n_squarings}};
  doc["post_scale"] = {{"translational", r.post_scale.translational},
                       {"rotational", r.post_scale.rotational},
                       {"scale", r.post_scale.scale_channel}};
  doc["loss"] = {{"ncc_eps", r.loss.ncc_eps},         {"fold_eps", r.loss.fold_eps},
                 {"fold_weight", r.loss.fold_weight}, {"grad_weight", r.loss.grad_weight},
                 {"hess_weight", r.loss.hess_weight}, {"bidirectional", r.loss.bidirectional}};
  const auto& s = cfg.synth;
  doc["synth"] = {{"control_grid", json::array({s.control_grid[0], s.control_grid[1], s.control_grid[2]})},
                  {"max_angle", s.max_angle},
                  {"max_translation", s.max_translation},
                  {"max_perturbation", s.max_perturbation},
                  {"noise_sigma", s.noise_sigma},
                  {"rotation_scale", s.rotation_scale},
                  {"translation_scale", s.translation_scale},
                  {"pad_fraction", s.pad_fraction},
                  {"seed", s.seed}};
  return doc.dump(2);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = dump_config(cfg);
  return hex32(crc32_bytes(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace groupflow
