// SPDX-License-Identifier: Apache-2.0
#include "msfc/commands.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "msfc/error.hpp"
#include "msfc/microshape.hpp"
#include "msfc/pipeline.hpp"
#include "msfc/seed.hpp"

namespace msfc {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.csv";
constexpr const char* kProtocol = "protocol.txt";
constexpr const char* kBackbone = "backbone_star.ckpt";
constexpr const char* kBackboneProvenance = "backbone_star.provenance";
constexpr const char* kBasis = "microshape.ckpt";
constexpr const char* kBasisProvenance = "microshape.provenance";
constexpr const char* kReport = "report.csv";

std::uint64_t data_seed(const RunConfig& c) { return derive_seed(c.seed, {100}); }
std::uint64_t pretrain_seed(const RunConfig& c) { return derive_seed(c.seed, {1}); }
std::uint64_t feature_seed(const RunConfig& c) { return derive_seed(c.seed, {2}); }
std::uint64_t kmeans_seed(const RunConfig& c) { return derive_seed(c.seed, {3}); }
std::uint64_t engine_seed(const RunConfig& c) { return derive_seed(c.seed, {4}); }
std::uint64_t prototype_seed(const RunConfig& c) { return derive_seed(c.seed, {5}); }

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw InputError("missing " + what + ": " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  out << text;
}

void write_resolved(const fs::path& dir, const std::string& name, const RunConfig& cfg) {
  write_text(dir / name, format_config(cfg));
}

std::map<std::string, std::string> read_key_values(const fs::path& p) { return parse_key_values(read_text(p), p.string()); }

std::vector<std::size_t> backbone_widths(const RunConfig& cfg) {
  std::vector<std::size_t> w = cfg.backbone_hidden;
  w.push_back(cfg.q);
  return w;
}

BackboneParams load_theta_star(const RunConfig& cfg) {
  const fs::path work = cfg.work_dir;
  require_file(work / kBackbone, "pretrained backbone (run 'pretrain' first)");
  require_file(work / kBackboneProvenance, "pretrain provenance");
  const auto widths = backbone_widths(cfg);
  BackboneParams b = make_backbone(widths, 0);
  restore_mlp(Checkpoint::load(work / kBackbone), "backbone_star", b.mlp);
  b.role = BackboneRole::pretrain_star;
  b.mlp.frozen = true;
  const auto record = read_key_values(work / kBackboneProvenance);
  const auto it = record.find("checksum");
  if (it == record.end()) throw FormatError("pretrain provenance has no checksum");
  const std::string actual = std::to_string(backbone_checksum(b));
  if (it->second != actual)
    throw ProvenanceError("backbone_star checksum " + actual + " does not match the pretrain record " + it->second);
  return b;
}

MicroshapeBasis load_basis(const RunConfig& cfg, const BackboneParams& theta_star) {
  const fs::path work = cfg.work_dir;
  require_file(work / kBasis, "microshape basis (run 'basis' first)");
  require_file(work / kBasisProvenance, "basis provenance");
  const BasisProvenance prov = parse_provenance(read_text(work / kBasisProvenance));
  if (prov.backbone_checksum != backbone_checksum(theta_star))
    throw ProvenanceError("basis was built from backbone checksum " + std::to_string(prov.backbone_checksum) +
                          ", current backbone_star is " + std::to_string(backbone_checksum(theta_star)));
  return restore_basis(Checkpoint::load(work / kBasis), prov);
}

BackboneParams as_stored(const RunConfig& cfg, const MlpParams& mlp, Checkpoint& ckpt) {
  store_mlp(ckpt, "backbone_star", mlp);
  BackboneParams stored = make_backbone(backbone_widths(cfg), 0);
  restore_mlp(ckpt, "backbone_star", stored.mlp);
  stored.mlp.frozen = true;
  stored.role = BackboneRole::pretrain_star;
  return stored;
}

MicroshapeBasis basis_stage(const RunConfig& cfg, const BackboneParams& theta_star,
                            std::span<const LabeledInstance> base_train, Checkpoint& ckpt) {
  const Tensor2 features = collect_base_features(theta_star, base_train, cfg.feature_cap, feature_seed(cfg));
  KMeansConfig kc;
  kc.m = cfg.m;
  kc.seed = kmeans_seed(cfg);
  kc.max_iters = cfg.kmeans_iters;
  const ClusterCenters centers = kmeans(features, kc);
  const EnergyMode mode = cfg.energy_mode == "linear" ? EnergyMode::linear : EnergyMode::squared;
  MicroshapeBasis basis = cfg.use_svd ? build_basis(centers, cfg.energy_threshold, mode) : raw_center_basis(centers);
  basis.provenance.feature_rows = features.rows();
  basis.provenance.backbone_checksum = backbone_checksum(theta_star);
  store_basis(ckpt, basis);
  return basis;
}

PreparedInputs load_inputs(const RunConfig& cfg) {
  PreparedInputs in;
  require_file(fs::path(cfg.data_dir) / kManifest, "dataset manifest (run 'generate' first)");
  require_file(fs::path(cfg.work_dir) / kProtocol, "protocol file (run 'protocol' first)");
  in.protocol = read_protocol(fs::path(cfg.work_dir) / kProtocol);
  in.data = load_dataset(cfg.data_dir);
  in.theta_star = load_theta_star(cfg);
  in.basis = load_basis(cfg, in.theta_star);
  in.prototypes = protocol_prototypes(in.protocol, prototype_source(cfg));
  return in;
}

std::string format_accuracies(const EvalReport& r) {
  std::string s;
  char buf[32];
  for (const auto& row : r.per_task) {
    std::snprintf(buf, sizeof buf, "%s%.3f", s.empty() ? "" : " ", row.accuracy);
    s += buf;
  }
  return s;
}

void finish_run(const fs::path& dir, const EvalReport& report, std::ostream& log, const std::string& title) {
  write_text(dir / kReport, format_report_csv(report));
  log << format_report_table(report, title);
  log << "wrote " << (dir / kReport).string() << "\n";
}

}  // namespace

std::vector<ShapeFamily> configured_families(const RunConfig& cfg) {
  std::vector<ShapeFamily> out;
  for (const auto& name : cfg.families) {
    ShapeFamily f = preset_family(name);
    f.corruption.jitter_sigma = cfg.jitter;
    f.corruption.occlusion_fraction = cfg.occlusion;
    f.corruption.clutter_fraction = cfg.clutter;
    f.corruption.density_bias = cfg.density_bias;
    f.validate();
    out.push_back(std::move(f));
  }
  return out;
}

EngineConfig engine_config(const RunConfig& cfg) {
  EngineConfig e;
  e.use_microshape = cfg.use_microshape;
  e.freeze = cfg.freeze;
  e.loss = parse_loss_variant(cfg.loss);
  e.d = cfg.d;
  e.relation_hidden = cfg.relation_hidden;
  e.base = {cfg.epochs_base, cfg.lr_base, cfg.batch_base};
  e.increment = {cfg.epochs_inc, cfg.lr_inc, cfg.batch_inc};
  e.augment_base = cfg.augment;
  e.augment_increment = cfg.augment;
  e.augment_config.shift_range = cfg.shift_range;
  e.augment_config.scale_min = cfg.scale_min;
  e.augment_config.scale_max = cfg.scale_max;
  e.augment_config.dropout_prob = cfg.dropout_prob;
  e.seed = engine_seed(cfg);
  return e;
}

PretrainConfig pretrain_config(const RunConfig& cfg) {
  PretrainConfig p;
  p.layers = backbone_widths(cfg);
  p.epochs = cfg.epochs_pretrain;
  p.learning_rate = cfg.lr_pretrain;
  p.batch_size = cfg.batch_pretrain;
  p.seed = pretrain_seed(cfg);
  p.augment = cfg.augment;
  p.augment_config.shift_range = cfg.shift_range;
  p.augment_config.scale_min = cfg.scale_min;
  p.augment_config.scale_max = cfg.scale_max;
  p.augment_config.dropout_prob = cfg.dropout_prob;
  return p;
}

FscilProtocol build_protocol(const RunConfig& cfg, std::span<const ManifestEntry> manifest) {
  auto filter = [&](Domain domain, const std::vector<std::string>& names) {
    const std::set<std::string> wanted(names.begin(), names.end());
    std::set<std::string> found;
    std::vector<ManifestEntry> out;
    for (const auto& e : manifest) {
      if (e.domain != domain) continue;
      if (!wanted.empty() && wanted.count(e.class_name) == 0) continue;
      found.insert(e.class_name);
      out.push_back(e);
    }
    for (const auto& n : wanted)
      if (found.count(n) == 0)
        throw ConfigError("class '" + n + "' has no " + to_string(domain) + "-domain entries in the manifest");
    return out;
  };
  const ProtocolMode mode = parse_protocol_mode(cfg.protocol_mode);
  FscilProtocol p;
  switch (mode) {
    case ProtocolMode::within: {
      const auto entries = filter(parse_domain(cfg.protocol_domain), {});
      p = build_within_protocol(entries, cfg.n_tasks, cfg.seed, parse_domain(cfg.protocol_domain),
                                cfg.base_count == 0 ? std::nullopt : std::optional<std::size_t>(cfg.base_count));
      break;
    }
    case ProtocolMode::cross:
      p = build_cross_protocol(filter(Domain::synthetic, cfg.base_classes), filter(Domain::real, cfg.novel_classes),
                               cfg.novel_per_task, cfg.seed);
      break;
    case ProtocolMode::dfsl:
      p = make_dfsl_protocol(filter(Domain::synthetic, cfg.base_classes), filter(Domain::real, cfg.novel_classes),
                             cfg.shots, cfg.episodes, cfg.seed);
      break;
    case ProtocolMode::single:
      p = make_single_protocol(manifest, parse_domain(cfg.protocol_domain), cfg.seed);
      break;
  }
  p.shots = cfg.shots;
  p.exemplars = cfg.exemplars;
  if (cfg.validation) p = make_validation_protocol(p, 0.6, cfg.novel_per_task);
  return p;
}

PrototypeSource prototype_source(const RunConfig& cfg) {
  PrototypeSource src;
  src.mode = parse_prototype_mode(cfg.prototype_mode);
  src.d = cfg.d;
  src.seed = prototype_seed(cfg);
  src.kappa = cfg.kappa;
  src.language_file = cfg.prototype_file;
  return src;
}

PreparedInputs prepare_inputs(const RunConfig& cfg) {
  PreparedInputs in;
  in.data = generate_dataset(configured_families(cfg), {cfg.train_count, cfg.test_count}, cfg.points, data_seed(cfg));
  for (auto& inst : in.data.instances) {
    std::stringstream text;
    write_cloud(inst.cloud, text);
    inst.cloud = parse_cloud(text);
  }
  in.protocol = build_protocol(cfg, in.data.manifest);
  const auto base_train = task_instances(in.protocol, in.data, 0, Split::train);
  Checkpoint backbone_ckpt, basis_ckpt;
  in.theta_star = as_stored(cfg, pretrain_backbone(base_train, pretrain_config(cfg)).backbone.mlp, backbone_ckpt);
  const MicroshapeBasis basis = basis_stage(cfg, in.theta_star, base_train, basis_ckpt);
  in.basis = restore_basis(basis_ckpt, basis.provenance);
  in.prototypes = protocol_prototypes(in.protocol, prototype_source(cfg));
  return in;
}

fs::path run_directory(const RunConfig& cfg, const std::string& command) {
  return cfg.run_dir.empty() ? fs::path(cfg.work_dir) / command : fs::path(cfg.run_dir);
}

void cmd_generate(const RunConfig& cfg, std::ostream& log) {
  const auto families = configured_families(cfg);
  const Dataset data = generate_dataset(families, {cfg.train_count, cfg.test_count}, cfg.points, data_seed(cfg));
  write_dataset(data, cfg.data_dir);
  write_resolved(cfg.data_dir, "generate.cfg", cfg);
  log << "generated " << data.instances.size() << " clouds of " << families.size() << " classes in "
      << cfg.data_dir << "\n";
}

void cmd_protocol(const RunConfig& cfg, std::ostream& log) {
  const fs::path manifest = fs::path(cfg.data_dir) / kManifest;
  require_file(manifest, "dataset manifest (run 'generate' first)");
  const auto entries = read_manifest(manifest);
  const FscilProtocol p = build_protocol(cfg, entries);
  fs::create_directories(cfg.work_dir);
  write_protocol(p, fs::path(cfg.work_dir) / kProtocol);
  write_resolved(cfg.work_dir, "protocol.cfg", cfg);
  log << "protocol " << to_string(p.mode) << ": " << p.tasks.front().size() << " base classes";
  for (std::size_t t = 1; t < p.tasks.size(); ++t) log << (t == 1 ? ", novel tasks " : "+") << p.tasks[t].size();
  log << "\n";
}

void cmd_pretrain(const RunConfig& cfg, std::ostream& log) {
  require_file(fs::path(cfg.data_dir) / kManifest, "dataset manifest (run 'generate' first)");
  require_file(fs::path(cfg.work_dir) / kProtocol, "protocol file (run 'protocol' first)");
  const FscilProtocol protocol = read_protocol(fs::path(cfg.work_dir) / kProtocol);
  const Dataset data = load_dataset(cfg.data_dir);
  const auto base_train = task_instances(protocol, data, 0, Split::train);
  const PretrainResult r = pretrain_backbone(base_train, pretrain_config(cfg));
  Checkpoint ckpt;
  // Checksum of the stored float32 weights, which is what later stages load.
  const BackboneParams stored = as_stored(cfg, r.backbone.mlp, ckpt);
  ckpt.save(fs::path(cfg.work_dir) / kBackbone);
  std::ostringstream prov;
  char buf[64];
  prov << "checksum = " << backbone_checksum(stored) << "\n";
  prov << "seed = " << pretrain_seed(cfg) << "\n";
  prov << "epochs = " << cfg.epochs_pretrain << "\n";
  std::snprintf(buf, sizeof buf, "%.6f", r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back());
  prov << "final_loss = " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.6f", r.train_accuracy);
  prov << "train_accuracy = " << buf << "\n";
  write_text(fs::path(cfg.work_dir) / kBackboneProvenance, prov.str());
  write_resolved(cfg.work_dir, "pretrain.cfg", cfg);
  log << "pretrained backbone_star on " << base_train.size() << " clouds, train accuracy " << buf << "\n";
}

void cmd_basis(const RunConfig& cfg, std::ostream& log) {
  const BackboneParams theta_star = load_theta_star(cfg);
  require_file(fs::path(cfg.work_dir) / kProtocol, "protocol file (run 'protocol' first)");
  const FscilProtocol protocol = read_protocol(fs::path(cfg.work_dir) / kProtocol);
  const Dataset data = load_dataset(cfg.data_dir);
  const auto base_train = task_instances(protocol, data, 0, Split::train);
  Checkpoint ckpt;
  const MicroshapeBasis basis = basis_stage(cfg, theta_star, base_train, ckpt);
  ckpt.save(fs::path(cfg.work_dir) / kBasis);
  write_text(fs::path(cfg.work_dir) / kBasisProvenance, format_provenance(basis.provenance));
  write_resolved(cfg.work_dir, "basis.cfg", cfg);
  log << "basis: " << basis.u() << " microshapes from " << cfg.m << " centers over " << basis.provenance.feature_rows
      << " point features\n";
}

EvalReport cmd_run(const RunConfig& cfg, std::ostream& log) {
  const PreparedInputs in = load_inputs(cfg);
  const PipelineInputs view = in.view();
  const fs::path dir = run_directory(cfg, "run");
  fs::create_directories(dir);
  write_resolved(dir, "config.resolved", cfg);
  const ModelState base = train_base_state(view, in.prototypes, engine_config(cfg));
  EvalReport report;
  if (in.protocol.mode == ProtocolMode::dfsl) {
    const auto acc = run_dfsl_episodes(base, view, std::max<std::size_t>(in.protocol.episodes, 1));
    report.per_task.push_back({1, in.protocol.tasks[0].size(), base_accuracy(base, view)});
    const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
    report.per_task.push_back({2, in.protocol.classes.size(), mean});
    report.finalize();
  } else {
    RunResult r = run_ours(base, view);
    for (const auto& w : r.warnings) log << "warning: " << w << "\n";
    for (std::size_t t = 0; t < r.frozen_intact.size(); ++t)
      if (!r.frozen_intact[t]) throw FreezeViolation("frozen parameters changed during task " + std::to_string(t + 2));
    Checkpoint ckpt;
    store_model(ckpt, r.state);
    ckpt.save(dir / "model.ckpt");
    write_text(dir / "model.sidecar", model_sidecar(r.state));
    report = r.report;
  }
  finish_run(dir, report, log, "run (" + format_accuracies(report) + ")");
  return report;
}

EvalReport cmd_baseline(const RunConfig& cfg, const std::string& kind, std::ostream& log) {
  if (kind != "ft" && kind != "joint") throw ConfigError("baseline must be 'ft' or 'joint', got '" + kind + "'");
  const PreparedInputs in = load_inputs(cfg);
  const PipelineInputs view = in.view();
  const fs::path dir = run_directory(cfg, kind);
  fs::create_directories(dir);
  write_resolved(dir, "config.resolved", cfg);
  const ModelState base = train_base_state(view, in.prototypes, engine_config(cfg));
  RunResult r = kind == "ft" ? run_ft_baseline(base, view)
                             : run_joint_baseline(base, view, {cfg.epochs_joint, cfg.lr_joint, cfg.batch_joint});
  for (const auto& w : r.warnings) log << "warning: " << w << "\n";
  finish_run(dir, r.report, log, kind + " (" + format_accuracies(r.report) + ")");
  return r.report;
}

std::string cmd_report(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<std::string> names;
  std::vector<EvalReport> reports;
  std::size_t rows = 0;
  for (const auto& d : run_dirs) {
    const fs::path file = fs::is_directory(d) ? d / kReport : d;
    require_file(file, "report");
    reports.push_back(parse_report_csv(read_text(file)));
    const fs::path name_src = fs::is_directory(d) ? d : d.parent_path();
    names.push_back(name_src.filename().empty() ? name_src.parent_path().filename().string() : name_src.filename().string());
    rows = std::max(rows, reports.back().per_task.size());
  }
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-6s", "task");
  out << buf;
  for (const auto& n : names) {
    std::snprintf(buf, sizeof buf, " %10s", n.substr(0, 10).c_str());
    out << buf;
  }
  out << "\n";
  for (std::size_t t = 0; t < rows; ++t) {
    std::snprintf(buf, sizeof buf, "%-6zu", t + 1);
    out << buf;
    for (const auto& r : reports) {
      if (t < r.per_task.size())
        std::snprintf(buf, sizeof buf, " %10.2f", 100.0 * r.per_task[t].accuracy);
      else
        std::snprintf(buf, sizeof buf, " %10s", "-");
      out << buf;
    }
    out << "\n";
  }
  std::snprintf(buf, sizeof buf, "%-6s", "delta");
  out << buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, " %10.2f", r.delta);
    out << buf;
  }
  out << "\n";
  return out.str();
}

}  // namespace msfc
