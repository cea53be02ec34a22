// SPDX-License-Identifier: Apache-2.0
#include "msfc/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "msfc/adam.hpp"
#include "msfc/error.hpp"
#include "msfc/loss.hpp"
#include "msfc/seed.hpp"

namespace msfc {

std::string to_string(LossVariant v) { return v == LossVariant::bce ? "bce" : "mse"; }

LossVariant parse_loss_variant(const std::string& s) {
  if (s == "bce" || s == "cross") return LossVariant::bce;
  if (s == "mse") return LossVariant::mse;
  throw ConfigError("unknown loss variant '" + s + "'");
}

ModelState make_state(const BackboneParams& theta_star, MicroshapeBasis basis, PrototypeTable prototypes,
                      const EngineConfig& config) {
  if (config.d == 0) throw ConfigError("embedding width d must be >= 1");
  if (prototypes.dim != 0 && prototypes.dim != config.d)
    throw ConfigError("prototype dimension " + std::to_string(prototypes.dim) + " does not match d = " +
                      std::to_string(config.d));
  ModelState s;
  s.config = config;
  s.backbone = theta_star;
  s.backbone.role = BackboneRole::pipeline;
  s.backbone.mlp.frozen = false;
  if (config.use_microshape && basis.q() != theta_star.q())
    throw ConfigError("basis width " + std::to_string(basis.q()) + " does not match backbone width " +
                      std::to_string(theta_star.q()));
  const std::size_t pooled = config.use_microshape ? basis.u() : theta_star.q();
  if (pooled == 0) throw ProtocolError("microshape basis missing");
  s.projection = make_projection(pooled, config.d, derive_seed(config.seed, {10}));
  std::vector<std::size_t> widths{2 * config.d};
  widths.insert(widths.end(), config.relation_hidden.begin(), config.relation_hidden.end());
  widths.push_back(1);
  std::vector<Activation> acts(widths.size() - 1, Activation::leaky_relu);
  acts.back() = Activation::none;  // sigmoid applied outside R
  std::mt19937_64 rng(derive_seed(config.seed, {11}));
  s.relation = make_mlp(widths, acts, rng, config.leaky_slope);
  s.basis = std::move(basis);
  s.prototypes = std::move(prototypes);
  if (s.prototypes.dim == 0) s.prototypes.dim = config.d;
  s.memory.selection_seed = config.exemplar_seed;
  return s;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Pooled descriptors (B x u or B x q) from stacked point features.
Tensor2 pool_features(const ModelState& state, const Tensor2& features, std::span<const std::size_t> offsets,
                      std::vector<std::size_t>* argmax) {
  const std::size_t n = offsets.size() - 1;
  if (!state.config.use_microshape) return max_pool(features, offsets, argmax);
  Tensor2 pooled(n, state.basis.u());
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = microshape_feature_rows(features, offsets[i], offsets[i + 1], state.basis);
    std::copy(e.begin(), e.end(), pooled.row(i).begin());
  }
  return pooled;
}

// dL/dF for every stacked point row given dL/d(pooled).
Tensor2 pool_backward(const ModelState& state, const Tensor2& pooled_grad, std::span<const std::size_t> offsets,
                      std::span<const std::size_t> argmax, std::size_t rows) {
  if (!state.config.use_microshape) return max_pool_backward(pooled_grad, argmax, rows);
  const Tensor2& P = state.basis.P;
  const std::size_t q = P.rows();
  Tensor2 grad(rows, q);
  std::vector<double> g(q);
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    const double inv = 1.0 / static_cast<double>(offsets[i + 1] - offsets[i]);
    auto de = pooled_grad.row(i);
    for (std::size_t r = 0; r < q; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < de.size(); ++k) s += P(r, k) * de[k];
      g[r] = s * inv;
    }
    for (std::size_t row = offsets[i]; row < offsets[i + 1]; ++row) std::copy(g.begin(), g.end(), grad.row(row).begin());
  }
  return grad;
}

Tensor2 relation_input(const ModelState& state, const Tensor2& z, std::span<const int> classes) {
  const std::size_t d = state.config.d;
  if (z.cols() != d) throw ConfigError("embedding width does not match d");
  Tensor2 in(z.rows() * classes.size(), 2 * d);
  for (std::size_t j = 0; j < classes.size(); ++j) {
    const auto& s = state.prototypes.at(classes[j]);
    if (s.size() != d) throw ConfigError("prototype width does not match d");
  }
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < classes.size(); ++j) {
      auto row = in.row(i * classes.size() + j);
      std::copy(z.row(i).begin(), z.row(i).end(), row.begin());
      const auto& s = state.prototypes.at(classes[j]);
      std::copy(s.begin(), s.end(), row.begin() + static_cast<std::ptrdiff_t>(d));
    }
  }
  return in;
}

std::vector<int> unique_classes(std::span<const LabeledInstance> instances) {
  std::set<int> ids;
  for (const auto& i : instances) ids.insert(i.class_id);
  return {ids.begin(), ids.end()};
}

LossResult score_loss(const ModelState& state, const Tensor2& scores, std::span<const int> labels,
                      std::span<const int> classes) {
  return state.config.loss == LossVariant::bce ? bce_multi_class(scores, labels, classes)
                                               : mse_multi_class(scores, labels, classes);
}

void seed_exemplars(ModelState& state, std::span<const LabeledInstance> pool, std::span<const int> classes) {
  if (!state.memory_enabled) return;
  for (int c : classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (pool[i].class_id == c) members.push_back(i);
    if (members.empty()) throw ProtocolError("no training sample to store for class " + std::to_string(c));
    std::mt19937_64 rng(derive_seed(state.memory.selection_seed, {static_cast<std::uint64_t>(c)}));
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng);
    state.memory.entries[c] = pool[members[pick]];
  }
}

}  // namespace

std::vector<double> pooled_descriptor(const ModelState& state, const PointCloud& cloud) {
  const Tensor2 f = extract_point_features(state.backbone, cloud);
  const std::size_t offsets[] = {0, f.rows()};
  const Tensor2 p = pool_features(state, f, offsets, nullptr);
  return {p.data().begin(), p.data().end()};
}

std::vector<double> encode(const ModelState& state, const PointCloud& cloud) {
  return embed(pooled_descriptor(state, cloud), state.projection);
}

Tensor2 encode_batch(const ModelState& state, std::span<const PointCloud* const> clouds) {
  Tensor2 z(clouds.size(), state.config.d);
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < clouds.size(); start += kChunk) {
    const std::size_t end = std::min(clouds.size(), start + kChunk);
    const PointBatch batch = stack_clouds(clouds.subspan(start, end - start));
    const Tensor2 features = mlp_infer(state.backbone.mlp, batch.points);
    const Tensor2 zc = mlp_infer(state.projection, pool_features(state, features, batch.offsets, nullptr));
    for (std::size_t i = start; i < end; ++i) std::copy(zc.row(i - start).begin(), zc.row(i - start).end(), z.row(i).begin());
  }
  return z;
}

Tensor2 relation_logits(const ModelState& state, const Tensor2& z, std::span<const int> classes) {
  const Tensor2 out = mlp_infer(state.relation, relation_input(state, z, classes));
  Tensor2 logits(z.rows(), classes.size());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < classes.size(); ++j) logits(i, j) = out(i * classes.size() + j, 0);
  return logits;
}

RelationScores relation_scores(const ModelState& state, const PointCloud& cloud) {
  if (state.seen_classes.empty()) throw ProtocolError("no classes to score against");
  const auto z = encode(state, cloud);
  const Tensor2 zt(1, z.size(), z);
  const Tensor2 logits = relation_logits(state, zt, state.seen_classes);
  RelationScores r;
  r.class_ids = state.seen_classes;
  r.logits.assign(logits.data().begin(), logits.data().end());
  for (double v : r.logits) r.scores.push_back(std::clamp(sigmoid(v), kScoreEps, 1.0 - kScoreEps));
  return r;
}

int argmax_lowest_id(std::span<const double> scores, std::span<const int> class_ids) {
  if (scores.empty() || scores.size() != class_ids.size()) throw ProtocolError("argmax over an empty class set");
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (scores[j] > scores[best] || (scores[j] == scores[best] && class_ids[j] < class_ids[best])) best = j;
  }
  return class_ids[best];
}

int predict(const ModelState& state, const PointCloud& cloud) {
  const PointCloud* one[] = {&cloud};
  return predict_batch(state, one).front();
}

std::vector<int> predict_batch(const ModelState& state, std::span<const PointCloud* const> clouds) {
  if (state.seen_classes.empty()) throw ProtocolError("no classes to score against");
  const Tensor2 z = encode_batch(state, clouds);
  const Tensor2 logits = relation_logits(state, z, state.seen_classes);
  std::vector<int> out;
  std::vector<double> scores(state.seen_classes.size());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < scores.size(); ++j) scores[j] = sigmoid(logits(i, j));
    out.push_back(argmax_lowest_id(scores, state.seen_classes));
  }
  return out;
}

namespace {

struct RelationPass {
  BatchGradients out;
  Tensor2 dz;
};

RelationPass relation_pass(const ModelState& state, const Tensor2& z, std::span<const int> labels,
                           std::span<const int> classes, bool need_z_grad) {
  const std::size_t b = z.rows();
  const std::size_t n_cls = classes.size();
  const std::size_t d = state.config.d;
  auto [logit_col, cache] = mlp_forward(state.relation, relation_input(state, z, classes));
  RelationPass r;
  r.out.scores = Tensor2(b, n_cls);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < n_cls; ++j) r.out.scores(i, j) = sigmoid(logit_col(i * n_cls + j, 0));
  const LossResult loss = score_loss(state, r.out.scores, labels, classes);
  r.out.loss = loss.loss;
  Tensor2 dlogit(b * n_cls, 1);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < n_cls; ++j) {
      const double s = r.out.scores(i, j);
      dlogit(i * n_cls + j, 0) = loss.gradient(i, j) * s * (1.0 - s);
    }
  r.out.relation = mlp_backward(state.relation, cache, dlogit, need_z_grad);
  if (need_z_grad) {
    r.dz = Tensor2(b, d);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < n_cls; ++j) {
        auto src = r.out.relation.input.row(i * n_cls + j);
        auto dst = r.dz.row(i);
        for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
      }
    r.out.relation.input = Tensor2();
  }
  return r;
}

}  // namespace

BatchGradients batch_gradients_from_z(const ModelState& state, const Tensor2& z, std::span<const int> labels,
                                      std::span<const int> classes) {
  return relation_pass(state, z, labels, classes, false).out;
}

BatchGradients batch_gradients(const ModelState& state, std::span<const PointCloud* const> clouds,
                               std::span<const int> labels, std::span<const int> classes, bool backbone_grads,
                               bool projection_grads) {
  if (clouds.size() != labels.size()) throw ConfigError("one label per cloud required");
  const bool need_encoder = backbone_grads || projection_grads;
  const PointBatch batch = stack_clouds(clouds);
  Tensor2 features;
  MlpCache backbone_cache;
  if (backbone_grads) {
    auto fw = mlp_forward(state.backbone.mlp, batch.points);
    features = std::move(fw.first);
    backbone_cache = std::move(fw.second);
  } else {
    features = mlp_infer(state.backbone.mlp, batch.points);
  }
  std::vector<std::size_t> argmax;
  const Tensor2 pooled = pool_features(state, features, batch.offsets, &argmax);
  Tensor2 z;
  MlpCache projection_cache;
  if (need_encoder) {
    auto fw = mlp_forward(state.projection, pooled);
    z = std::move(fw.first);
    projection_cache = std::move(fw.second);
  } else {
    z = mlp_infer(state.projection, pooled);
  }
  RelationPass r = relation_pass(state, z, labels, classes, need_encoder);
  if (need_encoder) {
    MlpGrads pg = mlp_backward(state.projection, projection_cache, r.dz, backbone_grads);
    if (backbone_grads) {
      const Tensor2 dfeat = pool_backward(state, pg.input, batch.offsets, argmax, features.rows());
      r.out.backbone = mlp_backward(state.backbone.mlp, backbone_cache, dfeat, false);
    }
    pg.input = Tensor2();
    if (projection_grads) r.out.projection = std::move(pg);
  }
  return std::move(r.out);
}

TrainReport fit(ModelState& state, std::span<const LabeledInstance* const> samples, std::span<const int> classes,
                const TrainConfig& config, const FitOptions& options, const TrainHooks& hooks) {
  if (config.batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (samples.empty()) throw ProtocolError("no training samples");
  if (options.train_backbone && state.backbone.frozen())
    throw FreezeViolation("backbone is frozen but the task asks to train it");
  if (options.train_projection && state.projection.frozen)
    throw FreezeViolation("projection W is frozen but the task asks to train it");
  if (state.relation.frozen) throw FreezeViolation("relation module must stay trainable");
  for (int c : classes) (void)state.prototypes.at(c);
  std::vector<int> labels_all;
  for (const auto* s : samples) {
    if (std::find(classes.begin(), classes.end(), s->class_id) == classes.end())
      throw ProtocolError("sample of class " + std::to_string(s->class_id) + " outside the scored class set");
    labels_all.push_back(s->class_id);
  }

  TrainReport report;
  if (config.epochs == 0) return report;

  const AdamConfig adam{config.learning_rate};
  OptimizerState opt_relation = make_optimizer(state.relation, adam);
  OptimizerState opt_projection = make_optimizer(state.projection, adam);
  OptimizerState opt_backbone = make_optimizer(state.backbone.mlp, adam);

  const bool encoder_static = !options.train_backbone && !options.train_projection && !options.augment;
  Tensor2 cached_z;
  if (encoder_static) {
    std::vector<const PointCloud*> clouds;
    for (const auto* s : samples) clouds.push_back(&s->cloud);
    cached_z = encode_batch(state, clouds);
  }

  const std::size_t d = state.config.d;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (!options.fixed_order) {
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(derive_seed(options.seed, {1, epoch}));
      std::shuffle(order.begin(), order.end(), rng);
    }
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t b = end - start;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) labels.push_back(labels_all[order[k]]);

      BatchGradients g;
      if (encoder_static) {
        Tensor2 z(b, d);
        for (std::size_t k = start; k < end; ++k)
          std::copy(cached_z.row(order[k]).begin(), cached_z.row(order[k]).end(), z.row(k - start).begin());
        g = batch_gradients_from_z(state, z, labels, classes);
      } else {
        std::vector<PointCloud> augmented;
        augmented.reserve(b);
        std::vector<const PointCloud*> clouds;
        for (std::size_t k = start; k < end; ++k) {
          const LabeledInstance* s = samples[order[k]];
          if (options.augment) {
            AugmentConfig ac = state.config.augment_config;
            ac.seed = derive_seed(options.seed, {2, epoch, order[k]});
            augmented.push_back(augment_cloud(s->cloud, ac));
            clouds.push_back(&augmented.back());
          } else {
            clouds.push_back(&s->cloud);
          }
        }
        g = batch_gradients(state, clouds, labels, classes, options.train_backbone, options.train_projection);
      }
      if (!std::isfinite(g.loss)) throw NumericError("non-finite training loss");
      loss_sum += g.loss * static_cast<double>(b);
      if (hooks.on_batch) hooks.on_batch(BatchRecord{g.scores, labels, classes, g.loss, report.steps});

      if (options.train_backbone) optimizer_step(state.backbone.mlp, g.backbone, opt_backbone);
      if (options.train_projection) optimizer_step(state.projection, g.projection, opt_projection);
      optimizer_step(state.relation, g.relation, opt_relation);
      ++report.steps;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    if (hooks.on_epoch) hooks.on_epoch(epoch, report.epoch_loss.back());
  }
  return report;
}

void add_feature_prototypes(ModelState& state, std::span<const LabeledInstance> instances) {
  std::map<int, std::vector<std::vector<double>>> grouped;
  for (const auto& inst : instances) grouped[inst.class_id].push_back(encode(state, inst.cloud));
  const PrototypeTable means = mean_prototypes(grouped);
  for (const auto& [id, v] : means.entries) state.prototypes.set(id, v);
}

TrainReport train_base(ModelState& state, std::span<const LabeledInstance> base_train, const TrainHooks& hooks) {
  if (state.task_index != 0) throw ProtocolError("base task already trained");
  if (state.config.use_microshape && state.basis.u() == 0) throw ProtocolError("microshape basis missing");
  if (base_train.empty()) throw ProtocolError("empty base task");
  const std::vector<int> classes = unique_classes(base_train);
  if (state.prototypes.mode == PrototypeMode::feature) {
    std::vector<LabeledInstance> missing;
    for (const auto& inst : base_train)
      if (!state.prototypes.contains(inst.class_id)) missing.push_back(inst);
    add_feature_prototypes(state, missing);
  }
  for (int c : classes) (void)state.prototypes.at(c);

  std::vector<const LabeledInstance*> samples;
  for (const auto& inst : base_train) samples.push_back(&inst);
  FitOptions opts;
  opts.train_backbone = !state.backbone.frozen();
  opts.train_projection = !state.projection.frozen;
  opts.augment = state.config.augment_base;
  opts.seed = derive_seed(state.config.seed, {20});
  TrainReport report = fit(state, samples, classes, state.config.base, opts, hooks);

  if (state.config.freeze) {
    state.backbone.mlp.frozen = true;
    state.projection.frozen = true;
  }
  seed_exemplars(state, base_train, classes);
  state.seen_classes = classes;
  state.task_index = 1;
  return report;
}

TrainReport train_increment(ModelState& state, std::span<const LabeledInstance> task_data, const TrainHooks& hooks) {
  if (state.task_index == 0) throw ProtocolError("incremental task before the base task");
  if (task_data.empty()) throw ProtocolError("empty incremental task");
  const std::vector<int> fresh = unique_classes(task_data);
  for (int c : fresh)
    if (std::binary_search(state.seen_classes.begin(), state.seen_classes.end(), c))
      throw ProtocolError("class " + std::to_string(c) + " was already learned in an earlier task");
  if (state.config.freeze && (!state.backbone.frozen() || !state.projection.frozen))
    throw FreezeViolation("backbone and W must be frozen after the base task");

  if (state.prototypes.mode == PrototypeMode::feature) {
    std::vector<LabeledInstance> missing;
    for (const auto& inst : task_data)
      if (!state.prototypes.contains(inst.class_id)) missing.push_back(inst);
    add_feature_prototypes(state, missing);
  }

  std::vector<int> classes = state.seen_classes;
  classes.insert(classes.end(), fresh.begin(), fresh.end());
  std::sort(classes.begin(), classes.end());
  for (int c : classes) (void)state.prototypes.at(c);

  std::vector<const LabeledInstance*> samples;
  for (const auto& inst : task_data) samples.push_back(&inst);
  if (state.memory_enabled)
    for (const auto& [id, inst] : state.memory.entries) samples.push_back(&inst);

  FitOptions opts;
  opts.train_backbone = !state.backbone.frozen();
  opts.train_projection = !state.projection.frozen;
  opts.augment = state.config.augment_increment;
  opts.seed = derive_seed(state.config.seed, {21, state.task_index});
  TrainReport report = fit(state, samples, classes, state.config.increment, opts, hooks);

  seed_exemplars(state, task_data, fresh);
  state.seen_classes = std::move(classes);
  state.task_index += 1;
  return report;
}

std::string frozen_part_bytes(const ModelState& state) {
  return serialize_mlp("backbone", state.backbone.mlp) + serialize_mlp("projection", state.projection);
}

void store_model(Checkpoint& ckpt, const ModelState& state) {
  store_mlp(ckpt, "backbone", state.backbone.mlp);
  store_mlp(ckpt, "projection", state.projection);
  store_mlp(ckpt, "relation", state.relation);
  store_basis(ckpt, state.basis);
  Tensor2 protos(state.seen_classes.size(), state.config.d);
  for (std::size_t i = 0; i < state.seen_classes.size(); ++i) {
    const auto& v = state.prototypes.at(state.seen_classes[i]);
    std::copy(v.begin(), v.end(), protos.row(i).begin());
  }
  if (!state.seen_classes.empty()) ckpt.put_tensor("prototypes", protos);
}

std::string model_sidecar(const ModelState& state) {
  std::ostringstream out;
  out << "task_index = " << state.task_index << "\n";
  out << "seen_classes = ";
  for (std::size_t i = 0; i < state.seen_classes.size(); ++i) out << (i ? "," : "") << state.seen_classes[i];
  out << "\n";
  out << "memory_classes = ";
  std::size_t k = 0;
  for (const auto& [id, inst] : state.memory.entries) out << (k++ ? "," : "") << id;
  out << "\n";
  out << "seed = " << state.config.seed << "\n";
  out << "exemplar_seed = " << state.memory.selection_seed << "\n";
  out << "prototype_mode = " << to_string(state.prototypes.mode) << "\n";
  out << "use_microshape = " << (state.config.use_microshape ? "true" : "false") << "\n";
  out << "freeze = " << (state.config.freeze ? "true" : "false") << "\n";
  return out.str();
}

}  // namespace msfc
