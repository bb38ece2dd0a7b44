#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "groupflow/config.hpp"
#include "groupflow/io.hpp"
#include "groupflow/metrics.hpp"
#include "groupflow/registration.hpp"
#include "groupflow/selftest.hpp"
#include "groupflow/synth.hpp"

namespace groupflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Overrides {
  std::string config;
  std::string preset;
  std::string group;
  std::optional<int> iterations;
  std::optional<double> lr;
  std::optional<double> w0;
  std::optional<double> sf_trans;
  std::optional<double> sf_rot;
  std::optional<int> squarings;
  bool bidirectional = false;
  std::optional<std::uint64_t> seed;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--preset", o.preset, "fitting, synthetic, inter-patient, desk-fitting or desk-synthetic");
  cmd->add_option("--group", o.group, "t3, se3 or sim3");
  cmd->add_option("--iterations", o.iterations, "ADAM iterations");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--w0", o.w0, "SIREN frequency factor");
  cmd->add_option("--sf-trans", o.sf_trans, "post-scale of the translational outputs");
  cmd->add_option("--sf-rot", o.sf_rot, "post-scale of the rotational outputs");
  cmd->add_option("--squarings", o.squarings, "scaling and squaring steps");
  cmd->add_flag("--bidirectional", o.bidirectional, "symmetric objective with the inverse deformation");
  cmd->add_option("--seed", o.seed, "seed for network init and synthetic data");
}

RunConfig resolve_config(const Overrides& o, const std::string& default_preset) {
  RunConfig cfg;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw Error(ErrorKind::InputNotFound, o.config + ": no such file");
    cfg = load_config(o.config);
    if (!o.preset.empty() && o.preset != cfg.preset) {
      throw Error(ErrorKind::InvalidArgument, "--preset conflicts with the preset in --config");
    }
    if (!o.group.empty()) cfg.registration.group = parse_group_kind(o.group);
  } else {
    cfg.preset = o.preset.empty() ? default_preset : o.preset;
    const GroupKind group = o.group.empty() ? GroupKind::SE3 : parse_group_kind(o.group);
    cfg.registration = preset(parse_experiment(cfg.preset), group);
  }
  auto& r = cfg.registration;
  if (o.iterations) r.iterations = *o.iterations;
  if (o.lr) r.lr = *o.lr;
  if (o.w0) r.siren.w0 = *o.w0;
  if (o.sf_trans) r.post_scale.translational = *o.sf_trans;
  if (o.sf_rot) r.post_scale.rotational = *o.sf_rot;
  if (o.squarings) r.flow.n_squarings = *o.squarings;
  if (o.bidirectional) r.loss.bidirectional = true;
  if (o.seed) {
    r.seed = *o.seed;
    cfg.synth.seed = *o.seed;
  }
  r = r.normalized();
  r.validate();
  cfg.synth.validate();
  return cfg;
}

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorKind::InputNotFound, path + ": no such file");
}

bool is_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[8] = {};
  in.read(magic, 8);
  return in.gcount() == 8 && std::string(magic, 7) == "GRPFLOW";
}

Volume load_image(const std::string& path) {
  require_file(path);
  return is_container(path) ? read_volume(path) : read_nifti_volume(path);
}

LabelVolume load_labels(const std::string& path) {
  require_file(path);
  return is_container(path) ? read_labels(path) : read_nifti_labels(path);
}

DispField load_field(const std::string& path) {
  require_file(path);
  return read_dispfield(path);
}

/// Nonzero voxels of a label or intensity file.
std::vector<std::uint8_t> load_mask(const std::string& path, const GridGeometry& geom) {
  require_file(path);
  std::vector<std::uint8_t> mask;
  GridGeometry g;
  if (is_container(path) && read_container_header(path).kind == ContainerKind::Labels) {
    const LabelVolume l = read_labels(path);
    g = l.geom;
    for (auto v : l.labels) mask.push_back(v != 0);
  } else {
    const Volume v = load_image(path);
    g = v.geom;
    for (double x : v.data) mask.push_back(x != 0.0);
  }
  if (g.dims != geom.dims) throw Error(ErrorKind::DimensionMismatch, path + ": mask grid does not match the image");
  return mask;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// Output directory with a manifest of every file written into it.
class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : root_(dir) {
    if (dir.empty()) throw Error(ErrorKind::InvalidArgument, "output directory is required");
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec || !fs::is_directory(root_)) throw Error(ErrorKind::Io, dir + ": cannot create output directory");
  }

  fs::path path(const std::string& name) const { return root_ / name; }

  void record(const std::string& name, std::optional<std::uint64_t> seed = std::nullopt) {
    const fs::path p = path(name);
    json entry = {{"path", name}, {"bytes", fs::file_size(p)}, {"adler32", hex32(file_adler32(p))}};
    if (seed) entry["seed"] = *seed;
    std::lock_guard<std::mutex> lock(mutex_);
    files_.push_back(std::move(entry));
  }

  void text(const std::string& name, const std::string& content) {
    write_text_file(path(name), content);
    record(name);
  }

  void finish(const std::string& command, const std::string& config_text, json extra = json::object()) {
    std::sort(files_.begin(), files_.end(), [](const json& a, const json& b) { return a["path"] < b["path"]; });
    json m = {{"tool", "groupflow"},
              {"version", GROUPFLOW_VERSION},
              {"container_version", 1},
              {"config_version", kConfigVersion},
              {"command", command},
              {"config_hash", hex32(crc32_bytes(reinterpret_cast<const std::uint8_t*>(config_text.data()),
                                                config_text.size()))},
              {"files", files_}};
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_text_file(path("manifest.json"), m.dump(2) + "\n");
  }

 private:
  fs::path root_;
  std::vector<json> files_;
  std::mutex mutex_;
};

std::string trace_csv(const std::vector<IterationRecord>& trace) {
  std::ostringstream os;
  os << "iteration,total,similarity,folding,gradient,hessian,bwd_similarity,bwd_folding,bwd_gradient,bwd_hessian\n";
  for (const auto& r : trace) {
    os << r.iteration << ',' << fmt(r.total) << ',' << fmt(r.forward.similarity) << ',' << fmt(r.forward.folding) << ','
       << fmt(r.forward.gradient) << ',' << fmt(r.forward.hessian) << ',' << fmt(r.backward.similarity) << ','
       << fmt(r.backward.folding) << ',' << fmt(r.backward.gradient) << ',' << fmt(r.backward.hessian) << '\n';
  }
  return os.str();
}

ProgressFn progress_printer(bool verbose, std::ostream& err) {
  if (!verbose) return nullptr;
  return [&err](const IterationRecord& r) {
    if (r.iteration % 10 == 0) err << "iteration " << r.iteration << " loss " << fmt(r.total) << "\n";
  };
}

void write_result(OutputDir& out, const RegistrationResult& r) {
  write_dispfield(out.path("phi.gfd"), r.phi);
  out.record("phi.gfd");
  write_dispfield(out.path("phi_inv.gfd"), r.phi_inv);
  out.record("phi_inv.gfd");
  write_liefield(out.path("velocity.gfa"), r.velocity);
  out.record("velocity.gfa");
  write_checkpoint(out.path("network.gfc"), r.params);
  out.record("network.gfc");
  out.text("trace.csv", trace_csv(r.trace));
}

json with_run_summary(const MetricsReport& report, const RegistrationResult& r, const RunConfig& cfg) {
  json j = json::parse(report.to_json());
  j["final_loss"] = r.final_loss;
  j["group"] = std::string(to_string(cfg.registration.group));
  j["iterations"] = cfg.registration.iterations;
  return j;
}

// ---- register ---------------------------------------------------------------

struct RegisterArgs {
  std::string fixed, moving, out, mask, fixed_labels, moving_labels, truth;
  bool verbose = false;
  Overrides o;
};

void cmd_register(const RegisterArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(a.o, "desk-synthetic");
  Volume I1 = load_image(a.fixed);
  const Volume I2 = load_image(a.moving);
  if (I1.geom.dims != I2.geom.dims) throw Error(ErrorKind::DimensionMismatch, "fixed and moving grids differ");
  I1.geom = I2.geom;
  if (!a.mask.empty()) I1.mask = load_mask(a.mask, I1.geom);
  std::optional<LabelVolume> S1, S2;
  if (!a.fixed_labels.empty()) S1 = load_labels(a.fixed_labels);
  if (!a.moving_labels.empty()) S2 = load_labels(a.moving_labels);
  std::optional<DispField> truth;
  if (!a.truth.empty()) truth = load_field(a.truth);
  OutputDir dir(a.out);

  const RegistrationResult r = register_images(I1, I2, cfg.registration, progress_printer(a.verbose, err));
  write_result(dir, r);
  const Volume warped = warp_volume(I2, r.phi);
  write_volume(dir.path("warped.gfv"), warped);
  dir.record("warped.gfv");

  MetricsReport report;
  const auto* mask = I1.mask ? &*I1.mask : nullptr;
  const DispField reference = truth ? *truth : DispField(r.phi.geom);
  if (reference.geom.dims != r.phi.geom.dims) throw Error(ErrorKind::DimensionMismatch, "ground truth grid differs");
  DispField ref_on_grid(r.phi.geom);
  ref_on_grid.data = reference.data;
  report.rmse_voxels = masked_rmse(r.phi, ref_on_grid, mask);
  report.ssim = ssim(I1, warped);
  report.negdet_fraction = r.negdet_fraction;
  report.fb_error = r.fb_error;
  report.bf_error = r.bf_error;
  if (S1 && S2) {
    report.dice_forward = dice(*S1, warp_labels(*S2, r.phi));
    report.dice_backward = dice(*S2, warp_labels(*S1, r.phi_inv));
  }
  json m = with_run_summary(report, r, cfg);
  m["rmse_reference"] = truth ? "truth" : "identity";
  dir.text("metrics.json", m.dump(2) + "\n");
  const std::string config_text = dump_config(cfg);
  dir.text("config.json", config_text + "\n");
  dir.finish("register", config_text, {{"seed", cfg.registration.seed}});
  out << "register: loss " << fmt(r.final_loss) << ", outputs in " << a.out << "\n";
}

// ---- fit --------------------------------------------------------------------

struct FitArgs {
  std::string target, out, mask;
  bool verbose = false;
  Overrides o;
};

void cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(a.o, "desk-fitting");
  const DispField target = load_field(a.target);
  std::optional<std::vector<std::uint8_t>> mask;
  if (!a.mask.empty()) mask = load_mask(a.mask, target.geom);
  OutputDir dir(a.out);
  const auto* mp = mask ? &*mask : nullptr;
  const RegistrationResult r = fit_deformation(target, cfg.registration, mp, progress_printer(a.verbose, err));
  write_result(dir, r);
  MetricsReport report;
  report.rmse_voxels = masked_rmse(r.phi, target, mp);
  report.negdet_fraction = r.negdet_fraction;
  report.fb_error = r.fb_error;
  report.bf_error = r.bf_error;
  json m = with_run_summary(report, r, cfg);
  m["rmse_reference"] = "truth";
  dir.text("metrics.json", m.dump(2) + "\n");
  const std::string config_text = dump_config(cfg);
  dir.text("config.json", config_text + "\n");
  dir.finish("fit", config_text, {{"seed", cfg.registration.seed}});
  out << "fit: rmse " << fmt(*report.rmse_voxels) << " voxels, outputs in " << a.out << "\n";
}

// ---- synth and sweep ----------------------------------------------------------

struct SourceArgs {
  std::string reference, labels;
  int phantom = 26;
};

void add_source(CLI::App* cmd, SourceArgs& s) {
  cmd->add_option("--reference", s.reference, "reference volume (container or NIfTI)");
  cmd->add_option("--labels", s.labels, "labels of the reference volume");
  cmd->add_option("--phantom", s.phantom, "edge length of the built-in phantom used without --reference")
      ->check(CLI::Range(8, 256));
}

struct Source {
  Volume image;
  std::optional<LabelVolume> labels;
};

Source load_source(const SourceArgs& s) {
  Source src;
  if (s.reference.empty()) {
    Phantom p = make_phantom({s.phantom, s.phantom, s.phantom});
    src.image = std::move(p.image);
    src.labels = std::move(p.labels);
  } else {
    src.image = load_image(s.reference);
    if (!s.labels.empty()) src.labels = load_labels(s.labels);
  }
  if (src.labels && src.labels->geom.dims != src.image.geom.dims) {
    throw Error(ErrorKind::DimensionMismatch, "labels grid does not match the reference");
  }
  if (src.labels) src.labels->geom = src.image.geom;
  return src;
}

void write_pair(OutputDir& dir, const std::string& prefix, const SyntheticPair& p, std::uint64_t seed) {
  auto put_volume = [&](const std::string& name, const Volume& v) {
    write_volume(dir.path(prefix + name), v);
    dir.record(prefix + name, seed);
  };
  put_volume("fixed.gfv", p.fixed);
  put_volume("moving.gfv", p.moving);
  write_dispfield(dir.path(prefix + "truth.gfd"), p.truth.phi);
  dir.record(prefix + "truth.gfd", seed);
  if (p.fixed_labels) {
    write_labels(dir.path(prefix + "fixed_labels.gfl"), *p.fixed_labels);
    dir.record(prefix + "fixed_labels.gfl", seed);
  }
  if (p.moving_labels) {
    write_labels(dir.path(prefix + "moving_labels.gfl"), *p.moving_labels);
    dir.record(prefix + "moving_labels.gfl", seed);
  }
}

std::string pair_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair_%03d/", i);
  return buf;
}

struct SynthArgs {
  SourceArgs source;
  std::string out;
  int count = 1;
  Overrides o;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.o, "desk-synthetic");
  const Source src = load_source(a.source);
  OutputDir dir(a.out);
  for (int i = 0; i < a.count; ++i) {
    SynthConfig sc = cfg.synth;
    sc.seed = cfg.synth.seed + std::uint64_t(i);
    Rng rng(sc.seed);
    const SyntheticPair p = synthesize_pair(src.image, sc, rng, src.labels ? &*src.labels : nullptr);
    fs::create_directories(dir.path(pair_name(i)));
    write_pair(dir, pair_name(i), p, sc.seed);
  }
  const std::string config_text = dump_config(cfg);
  dir.text("config.json", config_text + "\n");
  dir.finish("synth", config_text, {{"seed", cfg.synth.seed}, {"count", a.count}});
  out << "synth: " << a.count << " pair(s) in " << a.out << "\n";
}

struct SweepArgs {
  SourceArgs source;
  std::string out;
  std::string kind = "rotation";
  int steps = 10;
  bool do_register = false;
  std::vector<std::string> groups{"se3", "t3"};
  int jobs = 1;
  bool verbose = false;
  Overrides o;
};

/// Runs tasks on up to `jobs` worker threads; results do not depend on the
/// number of workers.
void run_jobs(int jobs, std::size_t count, const std::function<void(std::size_t)>& task) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, int(count)));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
  if (a.kind != "rotation" && a.kind != "translation") {
    throw Error(ErrorKind::InvalidArgument, "--kind must be rotation or translation");
  }
  if (a.steps < 1) throw Error(ErrorKind::InvalidArgument, "--steps must be >= 1");
  if (a.jobs < 1) throw Error(ErrorKind::InvalidArgument, "--jobs must be >= 1");
  const SweepKind kind = a.kind == "rotation" ? SweepKind::Rotation : SweepKind::Translation;
  const RunConfig cfg = resolve_config(a.o, "desk-synthetic");
  std::vector<GroupKind> groups;
  for (const auto& g : a.groups) groups.push_back(parse_group_kind(g));
  const Source src = load_source(a.source);
  OutputDir dir(a.out);
  const auto pairs = sweep_magnitudes(src.image, cfg.synth, a.steps, kind, src.labels ? &*src.labels : nullptr);

  std::ostringstream csv;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    fs::create_directories(dir.path(pair_name(int(i))));
    write_pair(dir, pair_name(int(i)), pairs[i], cfg.synth.seed);
  }

  std::vector<double> initial(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    initial[i] = masked_rmse(DispField(pairs[i].truth.phi.geom), pairs[i].truth.phi, &pairs[i].mask);
  }
  auto magnitude_columns = [&](std::size_t i) {
    const SynthConfig sc = sweep_config(cfg.synth, int(i), a.steps, kind);
    const double angle = sc.fixed_angle.value_or(0.0) * 180.0 / M_PI;
    return std::to_string(i) + ',' + fmt(angle) + ',' + fmt(sc.fixed_translation.value_or(0.0));
  };

  if (!a.do_register) {
    csv << "pair,angle_deg,translation,initial_rmse\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) csv << magnitude_columns(i) << ',' << fmt(initial[i]) << '\n';
  } else {
    struct Row {
      double rmse = 0.0;
      double negdet = 0.0;
      double dice = -1.0;
    };
    std::vector<Row> rows(pairs.size() * groups.size());
    run_jobs(a.jobs, rows.size(), [&](std::size_t t) {
      const std::size_t i = t / groups.size();
      RegistrationConfig rc = cfg.registration;
      rc.group = groups[t % groups.size()];
      rc = rc.normalized();
      const auto& p = pairs[i];
      const RegistrationResult r = register_images(p.fixed, p.moving, rc);
      Row row{masked_rmse(r.phi, p.truth.phi, &p.mask), r.negdet_fraction, -1.0};
      if (p.fixed_labels && p.moving_labels) row.dice = dice(*p.fixed_labels, warp_labels(*p.moving_labels, r.phi)).mean;
      rows[t] = row;
      if (a.verbose) {
        static std::mutex log_mutex;
        std::lock_guard<std::mutex> lock(log_mutex);
        err << "pair " << i << " " << to_string(rc.group) << " rmse " << fmt(row.rmse) << "\n";
      }
    });
    csv << "pair,angle_deg,translation,initial_rmse,group,final_rmse,negdet_fraction,dice\n";
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const std::size_t i = t / groups.size();
      csv << magnitude_columns(i) << ',' << fmt(initial[i]) << ',' << to_string(groups[t % groups.size()]) << ','
          << fmt(rows[t].rmse) << ',' << fmt(rows[t].negdet) << ',' << (rows[t].dice < 0 ? "" : fmt(rows[t].dice))
          << '\n';
    }
  }
  dir.text("sweep.csv", csv.str());
  const std::string config_text = dump_config(cfg);
  dir.text("config.json", config_text + "\n");
  dir.finish("sweep", config_text, {{"seed", cfg.synth.seed}, {"kind", a.kind}, {"steps", a.steps}});
  out << "sweep: " << pairs.size() << " pair(s) in " << a.out << "\n";
}

// ---- validate-inverse -----------------------------------------------------------

struct InverseArgs {
  std::string out;
  int size = 32;
  double amplitude = 0.2;
  int max_n = 12;
  std::uint64_t seed = 1;
};

void cmd_validate_inverse(const InverseArgs& a, std::ostream& out) {
  if (a.size < 4) throw Error(ErrorKind::InvalidArgument, "--size must be >= 4");
  if (a.max_n < 1) throw Error(ErrorKind::InvalidArgument, "--max-n must be >= 1");
  OutputDir dir(a.out);
  const GridGeometry g = GridGeometry::fit_unit_cube({a.size, a.size, a.size});
  std::ostringstream csv;
  csv << "n,fb,bf,group\n";
  for (GroupKind kind : {GroupKind::T3, GroupKind::SE3}) {
    const LieCoeffField v = random_velocity_field(g, kind, a.amplitude, a.seed);
    for (int n = 1; n <= a.max_n; ++n) {
      FlowConfig fc;
      fc.group = kind;
      fc.n_squarings = n;
      const InverseConsistency e = forward_backward_error(v, fc);
      csv << n << ',' << fmt(e.forward_backward) << ',' << fmt(e.backward_forward) << ',' << to_string(kind) << '\n';
    }
  }
  dir.text("inverse.csv", csv.str());
  const json params = {{"size", a.size}, {"amplitude", a.amplitude}, {"max_n", a.max_n}, {"seed", a.seed}};
  dir.finish("validate-inverse", params.dump(), {{"seed", a.seed}, {"parameters", params}});
  out << "validate-inverse: wrote " << dir.path("inverse.csv").string() << "\n";
}

// ---- eval -------------------------------------------------------------------------

struct EvalArgs {
  std::string phi, phi_inv, truth, mask, fixed, moving, fixed_labels, moving_labels, out;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const DispField phi = load_field(a.phi);
  auto same_grid = [&](const GridGeometry& g, const std::string& what) {
    if (g.dims != phi.geom.dims) throw Error(ErrorKind::DimensionMismatch, what + " grid does not match phi");
  };
  MetricsReport report;
  std::optional<std::vector<std::uint8_t>> mask;
  if (!a.mask.empty()) mask = load_mask(a.mask, phi.geom);
  if (!a.truth.empty()) {
    DispField truth = load_field(a.truth);
    same_grid(truth.geom, "truth");
    truth.geom = phi.geom;
    report.rmse_voxels = masked_rmse(phi, truth, mask ? &*mask : nullptr);
  }
  bool has_cells = true;
  for (int d : phi.geom.dims) has_cells = has_cells && d >= 2;
  if (has_cells) report.negdet_fraction = negdet_fraction(phi);
  std::optional<DispField> phi_inv;
  if (!a.phi_inv.empty()) {
    phi_inv = load_field(a.phi_inv);
    same_grid(phi_inv->geom, "phi_inv");
    const DispField fb = compose_displacements(phi, *phi_inv);
    const DispField bf = compose_displacements(*phi_inv, phi);
    double s_fb = 0.0, s_bf = 0.0;
    for (std::size_t i = 0; i < phi.geom.size(); ++i) {
      s_fb += to_voxels(phi.geom, fb.data[i]).norm();
      s_bf += to_voxels(phi.geom, bf.data[i]).norm();
    }
    report.fb_error = s_fb / double(phi.geom.size());
    report.bf_error = s_bf / double(phi.geom.size());
  }
  if (!a.fixed.empty() && !a.moving.empty()) {
    Volume I1 = load_image(a.fixed);
    Volume I2 = load_image(a.moving);
    same_grid(I1.geom, "fixed");
    same_grid(I2.geom, "moving");
    I2.geom = phi.geom;
    I1.geom = phi.geom;
    report.ssim = ssim(I1, warp_volume(I2, phi));
  }
  if (!a.fixed_labels.empty() && !a.moving_labels.empty()) {
    LabelVolume S1 = load_labels(a.fixed_labels);
    LabelVolume S2 = load_labels(a.moving_labels);
    same_grid(S1.geom, "fixed labels");
    same_grid(S2.geom, "moving labels");
    S1.geom = phi.geom;
    S2.geom = phi.geom;
    report.dice_forward = dice(S1, warp_labels(S2, phi));
    if (phi_inv) report.dice_backward = dice(S2, warp_labels(S1, *phi_inv));
  }
  OutputDir dir(a.out);
  dir.text("metrics.json", report.to_json() + "\n");
  dir.text("metrics.csv", MetricsReport::csv_header() + "\n" + report.csv_row(fs::path(a.phi).filename().string()) + "\n");
  const json inputs = {{"phi", a.phi},       {"phi_inv", a.phi_inv}, {"truth", a.truth},
                       {"mask", a.mask},     {"fixed", a.fixed},     {"moving", a.moving},
                       {"fixed_labels", a.fixed_labels}, {"moving_labels", a.moving_labels}};
  dir.finish("eval", inputs.dump(), {{"inputs", inputs}});
  out << report.to_json() << "\n";
}

// ---- selftest ---------------------------------------------------------------------

int cmd_selftest(unsigned seed, std::ostream& out) {
  bool ok = true;
  for (const auto& s : run_selftest(seed)) {
    out << (s.passed ? "PASS " : "FAIL ") << s.name << ": " << s.detail << "\n";
    ok = ok && s.passed;
  }
  return ok ? 0 : 1;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::LogDomain:
    case ErrorKind::NonFinite:
    case ErrorKind::Io:
      return 1;
    default:
      return 2;
  }
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lie-group flow deformable registration", "groupflow"};
  app.set_version_flag("--version", std::string(GROUPFLOW_VERSION));
  app.require_subcommand(1);
  int code = 0;
  std::function<void()> action;

  RegisterArgs reg;
  auto* c_reg = app.add_subcommand("register", "register a moving image to a fixed image");
  c_reg->add_option("--fixed", reg.fixed, "fixed image")->required();
  c_reg->add_option("--moving", reg.moving, "moving image")->required();
  c_reg->add_option("--out", reg.out, "output directory")->required();
  c_reg->add_option("--mask", reg.mask, "mask of the fixed image for the similarity term and RMSE");
  c_reg->add_option("--fixed-labels", reg.fixed_labels, "labels of the fixed image");
  c_reg->add_option("--moving-labels", reg.moving_labels, "labels of the moving image");
  c_reg->add_option("--truth", reg.truth, "ground-truth displacement for the RMSE");
  c_reg->add_flag("--verbose", reg.verbose, "print progress to stderr");
  add_overrides(c_reg, reg.o);
  c_reg->callback([&] { action = [&] { cmd_register(reg, out, err); }; });

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "fit the deformation model to a displacement field");
  c_fit->add_option("--target", fit.target, "target displacement field")->required();
  c_fit->add_option("--out", fit.out, "output directory")->required();
  c_fit->add_option("--mask", fit.mask, "voxels that enter the fitting loss");
  c_fit->add_flag("--verbose", fit.verbose, "print progress to stderr");
  add_overrides(c_fit, fit.o);
  c_fit->callback([&] { action = [&] { cmd_fit(fit, out, err); }; });

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "generate synthetic pairs with ground-truth deformations");
  add_source(c_syn, syn.source);
  c_syn->add_option("--out", syn.out, "output directory")->required();
  c_syn->add_option("--count", syn.count, "number of pairs")->check(CLI::PositiveNumber);
  add_overrides(c_syn, syn.o);
  c_syn->callback([&] { action = [&] { cmd_synth(syn, out); }; });

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "pairs of linearly increasing magnitude, optionally registered");
  add_source(c_sw, sw.source);
  c_sw->add_option("--out", sw.out, "output directory")->required();
  c_sw->add_option("--kind", sw.kind, "rotation or translation");
  c_sw->add_option("--steps", sw.steps, "number of pairs");
  c_sw->add_flag("--register", sw.do_register, "register every pair and tabulate the errors");
  c_sw->add_option("--groups", sw.groups, "groups to register with")->delimiter(',');
  c_sw->add_option("--jobs", sw.jobs, "registrations run concurrently");
  c_sw->add_flag("--verbose", sw.verbose, "print progress to stderr");
  add_overrides(c_sw, sw.o);
  c_sw->callback([&] { action = [&] { cmd_sweep(sw, out, err); }; });

  InverseArgs inv;
  auto* c_inv = app.add_subcommand("validate-inverse", "inverse consistency against the number of squarings");
  c_inv->add_option("--out", inv.out, "output directory")->required();
  c_inv->add_option("--size", inv.size, "grid edge length");
  c_inv->add_option("--amplitude", inv.amplitude, "peak velocity coefficient");
  c_inv->add_option("--max-n", inv.max_n, "largest number of squarings");
  c_inv->add_option("--seed", inv.seed, "seed of the random velocity fields");
  c_inv->callback([&] { action = [&] { cmd_validate_inverse(inv, out); }; });

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "metrics of a deformation");
  c_ev->add_option("--phi", ev.phi, "displacement field")->required();
  c_ev->add_option("--phi-inv", ev.phi_inv, "inverse displacement field");
  c_ev->add_option("--truth", ev.truth, "ground-truth displacement");
  c_ev->add_option("--mask", ev.mask, "RMSE mask");
  c_ev->add_option("--fixed", ev.fixed, "fixed image (for SSIM)");
  c_ev->add_option("--moving", ev.moving, "moving image (for SSIM)");
  c_ev->add_option("--fixed-labels", ev.fixed_labels, "fixed labels (for Dice)");
  c_ev->add_option("--moving-labels", ev.moving_labels, "moving labels (for Dice)");
  c_ev->add_option("--out", ev.out, "output directory")->required();
  c_ev->callback([&] { action = [&] { cmd_eval(ev, out); }; });

  unsigned st_seed = 1;
  auto* c_st = app.add_subcommand("selftest", "run the built-in oracle suites");
  c_st->add_option("--seed", st_seed, "seed of the random samples");
  c_st->callback([&] { action = [&] { code = cmd_selftest(st_seed, out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what());
    return 2;
  }
  try {
    action();
  } catch (const Error& e) {
    report_error(err, to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    report_error(err, "format", e.what());
    return 2;
  } catch (const std::bad_alloc&) {
    report_error(err, "io", "out of memory");
    return 1;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return 1;
  }
  return code;
}

}  // namespace groupflow::cli
