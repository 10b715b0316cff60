#include "calign/rng.hpp"

#include <cmath>

namespace calign {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Engine make_stream(std::uint64_t seed, std::string_view name) {
  return Engine(splitmix64(splitmix64(seed) ^ fnv1a(name)));
}

Engine make_stream(std::uint64_t seed, std::string_view name, std::uint64_t index) {
  return Engine(splitmix64(splitmix64(splitmix64(seed) ^ fnv1a(name)) + index));
}

Eigen::VectorXd standard_normal(Engine& engine, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(engine);
  return v;
}

Eigen::MatrixXd standard_normal(Engine& engine, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  // column-major fill order is part of the reproducibility contract
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(engine);
  return m;
}

Eigen::VectorXd random_unit_vector(Engine& engine, Eigen::Index n) {
  Eigen::VectorXd v;
  double norm = 0.0;
  do {
    v = standard_normal(engine, n);
    norm = v.norm();
  } while (norm < 1e-12);
  return v / norm;
}

Eigen::MatrixXd random_orthonormal(Engine& engine, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::MatrixXd g = standard_normal(engine, rows, cols);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < cols; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

}  // namespace calign
