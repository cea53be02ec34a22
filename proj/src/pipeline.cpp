// SPDX-License-Identifier: Apache-2.0
#include "msfc/pipeline.hpp"

#include "msfc/error.hpp"
#include "msfc/generator.hpp"
#include "msfc/seed.hpp"

namespace msfc {

namespace {

void check_inputs(const PipelineInputs& in) {
  if (!in.data || !in.protocol || !in.theta_star || !in.basis) throw InternalError("pipeline inputs incomplete");
  in.protocol->validate();
}

EvalRow eval_row(const ModelState& state, const PipelineInputs& in, std::size_t task) {
  EvalRow row;
  row.task_index = task + 1;
  row.classes_seen = in.protocol->seen_through(task).size();
  row.accuracy = evaluate(state, *in.data, *in.protocol, task);
  return row;
}

RunResult start_run(const ModelState& base, const PipelineInputs& in) {
  check_inputs(in);
  if (base.task_index != 1) throw ProtocolError("run needs a state trained on the base task only");
  RunResult r;
  r.state = base;
  r.report.per_task.push_back(eval_row(base, in, 0));
  return r;
}

}  // namespace

PrototypeTable protocol_prototypes(const FscilProtocol& protocol, const PrototypeSource& source) {
  std::vector<ClassRef> refs;
  for (std::size_t i = 0; i < protocol.classes.size(); ++i) refs.push_back({static_cast<int>(i), protocol.classes[i].name});
  switch (source.mode) {
    case PrototypeMode::language: {
      if (source.language_file.empty()) throw ConfigError("language prototypes need a prototype file");
      PrototypeTable t = load_language_prototypes(source.language_file, refs);
      if (t.dim != source.d)
        throw ConfigError("prototype file dimension " + std::to_string(t.dim) + " does not match d = " +
                          std::to_string(source.d));
      return t;
    }
    case PrototypeMode::feature: {
      PrototypeTable t;
      t.mode = PrototypeMode::feature;
      t.dim = source.d;
      t.source = "mean embedding";
      return t;
    }
    case PrototypeMode::synthetic: {
      std::vector<ClassSpec> specs;
      for (const auto& ref : refs) {
        std::string family = ref.name;
        try {
          family = to_string(preset_family(ref.name).family);
        } catch (const ConfigError&) {
        }
        specs.push_back({ref.id, ref.name, family});
      }
      return synth_prototypes(specs, source.d, source.seed, source.kappa);
    }
  }
  throw InternalError("unhandled prototype mode");
}

ModelState train_base_state(const PipelineInputs& in, PrototypeTable prototypes, const EngineConfig& config,
                            const TrainHooks& hooks) {
  check_inputs(in);
  ModelState state = make_state(*in.theta_star, *in.basis, std::move(prototypes), config);
  state.memory.selection_seed = in.protocol->exemplar_seed;
  const auto base_train = task_instances(*in.protocol, *in.data, 0, Split::train);
  train_base(state, base_train, hooks);
  return state;
}

double base_accuracy(const ModelState& base, const PipelineInputs& in) {
  return evaluate(base, *in.data, *in.protocol, 0);
}

RunResult run_ours(const ModelState& base, const PipelineInputs& in, const TrainHooks& hooks) {
  RunResult r = start_run(base, in);
  const std::string frozen = frozen_part_bytes(r.state);
  for (std::size_t t = 1; t < in.protocol->task_count(); ++t) {
    const auto shots = sample_shots(*in.protocol, *in.data, t, &r.warnings);
    r.training.push_back(train_increment(r.state, shots, hooks));
    r.frozen_intact.push_back(frozen_part_bytes(r.state) == frozen);
    r.report.per_task.push_back(eval_row(r.state, in, t));
  }
  r.report.finalize();
  return r;
}

RunResult run_ft_baseline(const ModelState& base, const PipelineInputs& in, const TrainHooks& hooks) {
  RunResult r = start_run(base, in);
  ModelState& s = r.state;
  s.memory.entries.clear();
  s.memory_enabled = false;
  s.config.freeze = false;
  s.backbone.mlp.frozen = false;
  s.projection.frozen = false;
  for (std::size_t t = 1; t < in.protocol->task_count(); ++t) {
    const auto shots = sample_shots(*in.protocol, *in.data, t, &r.warnings);
    r.training.push_back(train_increment(s, shots, hooks));
    if (!s.memory.entries.empty()) throw InternalError("fine-tuning baseline stored exemplars");
    r.report.per_task.push_back(eval_row(s, in, t));
  }
  r.report.finalize();
  return r;
}

RunResult run_joint_baseline(const ModelState& base, const PipelineInputs& in, const TrainConfig& joint,
                             const TrainHooks& hooks) {
  RunResult r = start_run(base, in);
  ModelState& s = r.state;
  s.memory.entries.clear();
  s.memory_enabled = false;
  const std::string frozen = frozen_part_bytes(s);
  for (std::size_t t = 1; t < in.protocol->task_count(); ++t) {
    const auto fresh = task_instances(*in.protocol, *in.data, t, Split::train);
    if (s.prototypes.mode == PrototypeMode::feature) add_feature_prototypes(s, fresh);
    std::vector<LabeledInstance> all;
    for (std::size_t i = 0; i <= t; ++i) {
      auto part = i == t ? fresh : task_instances(*in.protocol, *in.data, i, Split::train);
      all.insert(all.end(), part.begin(), part.end());
    }
    const std::vector<int> classes = in.protocol->seen_through(t);
    std::vector<const LabeledInstance*> samples;
    for (const auto& inst : all) samples.push_back(&inst);
    FitOptions opts;
    opts.train_backbone = !s.backbone.frozen();
    opts.train_projection = !s.projection.frozen;
    opts.augment = false;
    opts.seed = derive_seed(s.config.seed, {30, t});
    r.training.push_back(fit(s, samples, classes, joint, opts, hooks));
    s.seen_classes = classes;
    s.task_index += 1;
    r.frozen_intact.push_back(frozen_part_bytes(s) == frozen);
    r.report.per_task.push_back(eval_row(s, in, t));
  }
  r.report.finalize();
  return r;
}

std::vector<double> run_dfsl_episodes(const ModelState& base, const PipelineInputs& in, std::size_t episodes) {
  check_inputs(in);
  if (in.protocol->task_count() != 2) throw ProtocolError("episodes need a two-task protocol");
  if (base.task_index != 1) throw ProtocolError("episodes need a state trained on the base task only");
  std::vector<double> acc;
  for (std::size_t e = 0; e < episodes; ++e) {
    ModelState s = base;
    const auto shots = sample_shots(*in.protocol, *in.data, 1, nullptr, derive_seed(in.protocol->shot_seed, {e}));
    train_increment(s, shots);
    acc.push_back(evaluate(s, *in.data, *in.protocol, 1));
  }
  return acc;
}

}  // namespace msfc
