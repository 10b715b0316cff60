#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace calign {

using Engine = std::mt19937_64;

/// Derives an independent engine for a named consumer from a single run seed.
/// Adding a new stream name never perturbs the draws of existing ones.
Engine make_stream(std::uint64_t seed, std::string_view name);

/// Same as above with an extra integer index (per-trial or per-instance
/// sub-streams).
Engine make_stream(std::uint64_t seed, std::string_view name, std::uint64_t index);

Eigen::VectorXd standard_normal(Engine& engine, Eigen::Index n);
Eigen::MatrixXd standard_normal(Engine& engine, Eigen::Index rows, Eigen::Index cols);

/// Uniformly distributed point on the unit sphere in R^n.
Eigen::VectorXd random_unit_vector(Engine& engine, Eigen::Index n);

/// Matrix with orthonormal columns spanning the range of a Gaussian draw
/// (Q factor with a positive-diagonal R, so the result is deterministic).
Eigen::MatrixXd random_orthonormal(Engine& engine, Eigen::Index rows, Eigen::Index cols);

}  // namespace calign
