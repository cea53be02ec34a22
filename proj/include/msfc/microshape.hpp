// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "msfc/backbone.hpp"
#include "msfc/checkpoint.hpp"
#include "msfc/mlp.hpp"
#include "msfc/pointcloud.hpp"

namespace msfc {

/// Point features of every base training cloud stacked in (instance, point)
/// order. If there are more than `cap` rows, a seeded uniform subsample of
/// exactly `cap` rows is kept (original order preserved).
Tensor2 collect_base_features(const BackboneParams& backbone, std::span<const LabeledInstance> base_train,
                              std::size_t cap, std::uint64_t seed);

struct KMeansConfig {
  std::size_t m = 64;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  double tol = 1e-6;
};

struct ClusterCenters {
  Tensor2 centers;  // q x m, one center per column
  std::size_t m = 0;
  std::vector<double> inertia_history;  // objective after each assignment step
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
};

/// Lloyd iterations from a seeded farthest-first initialization: the first
/// center is a seeded random row, each further center is the row farthest
/// from the centers chosen so far. A cluster that goes empty is re-seeded
/// at the row farthest from its current center. Stops when no center moves
/// by more than `tol` or after `max_iters` updates.
ClusterCenters kmeans(const Tensor2& features, const KMeansConfig& config);

enum class EnergyMode { squared, linear };

struct BasisProvenance {
  std::size_t m = 0;
  std::uint64_t seed = 0;
  double energy_threshold = 0.95;
  EnergyMode energy_mode = EnergyMode::squared;
  bool svd = true;
  std::size_t feature_rows = 0;
  std::uint64_t backbone_checksum = 0;
};

struct MicroshapeBasis {
  Tensor2 P;                            // q x u, orthonormal columns (when built by SVD)
  std::vector<double> singular_values;  // full spectrum of the centers
  double energy_threshold = 0.95;
  BasisProvenance provenance;

  std::size_t q() const { return P.rows(); }
  std::size_t u() const { return P.cols(); }
};

/// Smallest u whose cumulative energy reaches `threshold` of the total.
/// Squared mode sums sigma^2, linear mode sums sigma.
std::size_t basis_size(std::span<const double> singular_values, double threshold,
                       EnergyMode mode = EnergyMode::squared);

/// SVD C = U D V^T and P = leading u left singular vectors.
MicroshapeBasis build_basis(const ClusterCenters& centers, double energy_threshold,
                            EnergyMode mode = EnergyMode::squared);

/// Ablation without SVD: the unit-normalized raw centers are the basis.
MicroshapeBasis raw_center_basis(const ClusterCenters& centers);

/// max |P^T P - I|.
double orthonormality_error(const Tensor2& P);

/// e_k = (1/l) sum_b <f_b, p_k> for an l x q feature matrix. The point sum
/// is compensated, so the result is insensitive to point order.
std::vector<double> microshape_feature(const Tensor2& point_features, const MicroshapeBasis& basis);
/// Same, over rows [begin, end) of a stacked batch.
std::vector<double> microshape_feature_rows(const Tensor2& point_features, std::size_t begin, std::size_t end,
                                            const MicroshapeBasis& basis);
std::vector<double> microshape_feature(const PointCloud& cloud, const BackboneParams& backbone,
                                       const MicroshapeBasis& basis);

/// z = ReLU(W e + b) through a single-layer MLP.
std::vector<double> embed(std::span<const double> e, const MlpParams& projection);

/// Single relu layer d x u with Glorot init.
MlpParams make_projection(std::size_t u, std::size_t d, std::uint64_t seed);

void store_basis(Checkpoint& ckpt, const MicroshapeBasis& basis);
MicroshapeBasis restore_basis(const Checkpoint& ckpt, const BasisProvenance& provenance);

std::string format_provenance(const BasisProvenance& p);
BasisProvenance parse_provenance(const std::string& text);

}  // namespace msfc
