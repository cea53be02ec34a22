// SPDX-License-Identifier: Apache-2.0
#include "msfc/microshape.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "msfc/error.hpp"
#include "msfc/seed.hpp"

namespace msfc {

Tensor2 collect_base_features(const BackboneParams& backbone, std::span<const LabeledInstance> base_train,
                              std::size_t cap, std::uint64_t seed) {
  if (!backbone.frozen()) throw ProtocolError("microshape features must come from the frozen pretrained backbone");
  if (base_train.empty()) throw ProtocolError("no base training instances to collect features from");
  if (cap == 0) throw ConfigError("feature cap must be >= 1");

  std::size_t total = 0;
  for (const auto& inst : base_train) total += inst.cloud.size();

  std::vector<char> keep(total, 1);
  if (total > cap) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates: the first `cap` slots become the sample.
    for (std::size_t i = 0; i < cap; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    std::fill(keep.begin(), keep.end(), 0);
    for (std::size_t i = 0; i < cap; ++i) keep[idx[i]] = 1;
  }

  const std::size_t q = backbone.q();
  Tensor2 out(std::min(total, cap), q);
  std::size_t global = 0;
  std::size_t row = 0;
  for (const auto& inst : base_train) {
    const Tensor2 f = extract_point_features(backbone, inst.cloud);
    for (std::size_t r = 0; r < f.rows(); ++r, ++global) {
      if (!keep[global]) continue;
      std::copy(f.row(r).begin(), f.row(r).end(), out.row(row).begin());
      ++row;
    }
  }
  return out;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

ClusterCenters kmeans(const Tensor2& features, const KMeansConfig& config) {
  const std::size_t n = features.rows();
  const std::size_t q = features.cols();
  const std::size_t m = config.m;
  if (m == 0) throw ConfigError("kmeans needs m >= 1");
  if (n < m)
    throw InputError("kmeans needs at least m rows (" + std::to_string(n) + " < " + std::to_string(m) + ")");
  if (!features.all_finite()) throw InputError("kmeans input has non-finite values");

  // centers stored row-wise during iteration (m x q)
  Tensor2 centers(m, q);
  std::mt19937_64 rng(config.seed);
  const std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::copy(features.row(first).begin(), features.row(first).end(), centers.row(0).begin());
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < m; ++c) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], sq_dist(features.row(i), centers.row(c - 1)));
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    std::copy(features.row(best).begin(), features.row(best).end(), centers.row(c).begin());
  }

  ClusterCenters out;
  out.m = m;
  out.seed = config.seed;
  std::vector<std::size_t> assign(n, 0);
  std::vector<double> dist(n, 0.0);
  for (std::size_t iter = 0; iter < std::max<std::size_t>(config.max_iters, 1); ++iter) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < m; ++c) {
        const double d = sq_dist(features.row(i), centers.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[i] = best;
      dist[i] = best_d;
      inertia += best_d;
    }
    out.inertia_history.push_back(inertia);
    if (iter + 1 > config.max_iters) break;

    Tensor2 next(m, q);
    std::vector<std::size_t> count(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = next.row(assign[i]);
      auto src = features.row(i);
      for (std::size_t k = 0; k < q; ++k) dst[k] += src[k];
      ++count[assign[i]];
    }
    std::vector<char> used(n, 0);
    for (std::size_t c = 0; c < m; ++c) {
      if (count[c] > 0) {
        const double inv = 1.0 / static_cast<double>(count[c]);
        for (double& v : next.row(c)) v *= inv;
        continue;
      }
      // Empty cluster: move it onto the worst-served row.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!used[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      used[far] = 1;
      dist[far] = 0.0;
      std::copy(features.row(far).begin(), features.row(far).end(), next.row(c).begin());
    }
    double moved = 0.0;
    for (std::size_t c = 0; c < m; ++c) moved = std::max(moved, std::sqrt(sq_dist(next.row(c), centers.row(c))));
    centers = std::move(next);
    out.iterations = iter + 1;
    if (moved < config.tol) {
      // Record the objective of the final centers.
      double final_inertia = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < m; ++c) best_d = std::min(best_d, sq_dist(features.row(i), centers.row(c)));
        final_inertia += best_d;
      }
      out.inertia_history.push_back(final_inertia);
      break;
    }
  }
  out.centers = centers.transposed();
  return out;
}

std::size_t basis_size(std::span<const double> singular_values, double threshold, EnergyMode mode) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("energy threshold must lie in (0,1]");
  std::vector<double> energy;
  for (double s : singular_values) energy.push_back(mode == EnergyMode::squared ? s * s : s);
  const double total = std::accumulate(energy.begin(), energy.end(), 0.0);
  if (!(total > 0.0)) throw DegenerateInputError("cluster centers have zero energy (rank 0)");
  double cum = 0.0;
  for (std::size_t i = 0; i < energy.size(); ++i) {
    cum += energy[i];
    if (cum >= threshold * total) return i + 1;
  }
  return energy.size();
}

MicroshapeBasis build_basis(const ClusterCenters& centers, double energy_threshold, EnergyMode mode) {
  const Tensor2& C = centers.centers;
  if (C.empty()) throw DegenerateInputError("empty cluster center matrix");
  if (!C.all_finite()) throw InputError("cluster centers contain non-finite values");
  Eigen::MatrixXd mat(C.rows(), C.cols());
  for (std::size_t r = 0; r < C.rows(); ++r)
    for (std::size_t c = 0; c < C.cols(); ++c) mat(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = C(r, c);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  std::vector<double> sigma(sv.data(), sv.data() + sv.size());
  const std::size_t u = std::min(basis_size(sigma, energy_threshold, mode), sigma.size());

  MicroshapeBasis basis;
  basis.P = Tensor2(C.rows(), u);
  const auto& U = svd.matrixU();
  for (std::size_t r = 0; r < C.rows(); ++r)
    for (std::size_t k = 0; k < u; ++k) basis.P(r, k) = U(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
  basis.singular_values = std::move(sigma);
  basis.energy_threshold = energy_threshold;
  basis.provenance.m = centers.m;
  basis.provenance.seed = centers.seed;
  basis.provenance.energy_threshold = energy_threshold;
  basis.provenance.energy_mode = mode;
  basis.provenance.svd = true;
  return basis;
}

MicroshapeBasis raw_center_basis(const ClusterCenters& centers) {
  const Tensor2& C = centers.centers;
  MicroshapeBasis basis;
  basis.P = C;
  for (std::size_t c = 0; c < C.cols(); ++c) {
    double n2 = 0.0;
    for (std::size_t r = 0; r < C.rows(); ++r) n2 += C(r, c) * C(r, c);
    if (n2 <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t r = 0; r < C.rows(); ++r) basis.P(r, c) *= inv;
  }
  basis.energy_threshold = 1.0;
  basis.provenance.m = centers.m;
  basis.provenance.seed = centers.seed;
  basis.provenance.energy_threshold = 1.0;
  basis.provenance.svd = false;
  return basis;
}

double orthonormality_error(const Tensor2& P) {
  const Tensor2 g = matmul_tn(P, P);
  double e = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) e = std::max(e, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return e;
}

std::vector<double> microshape_feature(const Tensor2& point_features, const MicroshapeBasis& basis) {
  return microshape_feature_rows(point_features, 0, point_features.rows(), basis);
}

std::vector<double> microshape_feature_rows(const Tensor2& point_features, std::size_t begin, std::size_t end,
                                            const MicroshapeBasis& basis) {
  if (end < begin || end > point_features.rows()) throw InternalError("microshape feature row range out of bounds");
  const std::size_t l = end - begin;
  const std::size_t q = point_features.cols();
  const std::size_t u = basis.u();
  if (q != basis.q())
    throw ConfigError("backbone feature width " + std::to_string(q) + " does not match basis width " +
                      std::to_string(basis.q()));
  if (l == 0) throw InputError("microshape feature of an empty cloud");
  // Neumaier-compensated sums over points of <f_b, p_k>.
  std::vector<double> sum(u, 0.0), comp(u, 0.0), proj(u);
  for (std::size_t b = begin; b < end; ++b) {
    std::fill(proj.begin(), proj.end(), 0.0);
    auto f = point_features.row(b);
    for (std::size_t r = 0; r < q; ++r) {
      const double fr = f[r];
      if (fr == 0.0) continue;
      auto prow = basis.P.row(r);
      for (std::size_t k = 0; k < u; ++k) proj[k] += fr * prow[k];
    }
    for (std::size_t k = 0; k < u; ++k) {
      const double t = sum[k] + proj[k];
      if (std::abs(sum[k]) >= std::abs(proj[k])) comp[k] += (sum[k] - t) + proj[k];
      else comp[k] += (proj[k] - t) + sum[k];
      sum[k] = t;
    }
  }
  std::vector<double> e(u);
  const double inv = 1.0 / static_cast<double>(l);
  for (std::size_t k = 0; k < u; ++k) e[k] = (sum[k] + comp[k]) * inv;
  return e;
}

std::vector<double> microshape_feature(const PointCloud& cloud, const BackboneParams& backbone,
                                       const MicroshapeBasis& basis) {
  return microshape_feature(extract_point_features(backbone, cloud), basis);
}

std::vector<double> embed(std::span<const double> e, const MlpParams& projection) {
  if (projection.layers.size() != 1) throw ConfigError("projection W must be a single layer");
  if (e.size() != projection.input_dim())
    throw ConfigError("projection expects " + std::to_string(projection.input_dim()) + " inputs, got " +
                      std::to_string(e.size()));
  Tensor2 in(1, e.size(), std::vector<double>(e.begin(), e.end()));
  const Tensor2 z = mlp_infer(projection, in);
  return {z.data().begin(), z.data().end()};
}

MlpParams make_projection(std::size_t u, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t widths[] = {u, d};
  const Activation acts[] = {Activation::relu};
  return make_mlp(widths, acts, rng);
}

void store_basis(Checkpoint& ckpt, const MicroshapeBasis& basis) {
  ckpt.put_tensor("microshape.P", basis.P);
  ckpt.put_vector("microshape.sigma", basis.singular_values);
}

MicroshapeBasis restore_basis(const Checkpoint& ckpt, const BasisProvenance& provenance) {
  MicroshapeBasis b;
  b.P = ckpt.tensor("microshape.P");
  b.singular_values = ckpt.vector("microshape.sigma");
  b.energy_threshold = provenance.energy_threshold;
  b.provenance = provenance;
  return b;
}

std::string format_provenance(const BasisProvenance& p) {
  std::ostringstream out;
  out.precision(17);
  out << "m = " << p.m << "\n"
      << "seed = " << p.seed << "\n"
      << "energy_threshold = " << p.energy_threshold << "\n"
      << "energy_mode = " << (p.energy_mode == EnergyMode::squared ? "squared" : "linear") << "\n"
      << "svd = " << (p.svd ? "true" : "false") << "\n"
      << "feature_rows = " << p.feature_rows << "\n"
      << "backbone_checksum = " << p.backbone_checksum << "\n";
  return out.str();
}

BasisProvenance parse_provenance(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("basis provenance lacks '") + key + "'");
    return it->second;
  };
  BasisProvenance p;
  try {
    p.m = std::stoull(get("m"));
    p.seed = std::stoull(get("seed"));
    p.energy_threshold = std::stod(get("energy_threshold"));
    p.energy_mode = get("energy_mode") == "linear" ? EnergyMode::linear : EnergyMode::squared;
    p.svd = get("svd") == "true";
    p.feature_rows = std::stoull(get("feature_rows"));
    p.backbone_checksum = std::stoull(get("backbone_checksum"));
  } catch (const std::invalid_argument&) {
    throw FormatError("malformed basis provenance value");
  } catch (const std::out_of_range&) {
    throw FormatError("basis provenance value out of range");
  }
  return p;
}

}  // namespace msfc
