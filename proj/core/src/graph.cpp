#include "egtas/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>
#include <string>

#include "egtas/error.hpp"

namespace egtas {

void GraphInstance::validate() const {
  if (n < 0) throw InvalidArgument("negative node count");
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n) {
      throw InvalidArgument("edge (" + std::to_string(u) + "," + std::to_string(v) +
                            ") has an endpoint outside [0, " + std::to_string(n) + ")");
    }
    if (u == v) throw InvalidArgument("self-loop on node " + std::to_string(u));
  }
  if (features.rows() != n) throw InvalidArgument("feature matrix must have one row per node");
  if (node_labels && static_cast<int>(node_labels->size()) != n) {
    throw InvalidArgument("node_labels must have length n");
  }
  if (split_masks) {
    const auto& m = *split_masks;
    if (static_cast<int>(m.train.size()) != n || static_cast<int>(m.val.size()) != n ||
        static_cast<int>(m.test.size()) != n) {
      throw InvalidArgument("split masks must have length n");
    }
    for (int i = 0; i < n; ++i) {
      if (int(m.train[i]) + int(m.val[i]) + int(m.test[i]) > 1) {
        throw InvalidArgument("split masks overlap at node " + std::to_string(i));
      }
    }
  }
}

Matrix GraphInstance::adjacency() const {
  Matrix a = Matrix::Zero(n, n);
  for (auto [u, v] : edges) {
    a(u, v) = 1.0;
    a(v, u) = 1.0;
  }
  return a;
}

std::vector<std::vector<int>> GraphInstance::neighbors() const {
  std::vector<std::set<int>> sets(static_cast<std::size_t>(n));
  for (auto [u, v] : edges) {
    sets[u].insert(v);
    sets[v].insert(u);
  }
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[i].assign(sets[i].begin(), sets[i].end());
  return out;
}

bool structurally_equal(const GraphInstance& a, const GraphInstance& b) {
  return a.n == b.n && a.edges == b.edges && a.features.rows() == b.features.rows() &&
         a.features.cols() == b.features.cols() && a.features == b.features &&
         a.node_labels == b.node_labels && a.graph_label == b.graph_label &&
         a.split_masks == b.split_masks;
}

int DistanceMatrix::diameter() const {
  int best = 0;
  for (int d : dist) best = std::max(best, d);
  return best;
}

SymmetricEigen jacobi_eigen(const Matrix& symmetric, double tolerance, int max_sweeps) {
  const Eigen::Index n = symmetric.rows();
  if (symmetric.cols() != n) throw InvalidArgument("jacobi_eigen needs a square matrix");
  Matrix a = 0.5 * (symmetric + symmetric.transpose());
  Matrix v = Matrix::Identity(n, n);
  const double scale = std::max(1.0, a.norm());

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= tolerance * scale) break;

    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // A <- J^T A J restricted to rows/cols p, q
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) < a(j, j); });
  SymmetricEigen out{Vector(n), Matrix(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = a(order[i], order[i]);
    out.vectors.col(i) = v.col(order[i]);
  }
  return out;
}

Matrix normalized_laplacian(const GraphInstance& g) {
  const Matrix a = g.adjacency();
  Vector inv_sqrt(g.n);
  for (int i = 0; i < g.n; ++i) {
    const double deg = a.row(i).sum();
    inv_sqrt(i) = deg > 0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  Matrix l = Matrix::Identity(g.n, g.n);
  l -= inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
  return l;
}

Vector laplacian_spectrum(const GraphInstance& g) {
  return jacobi_eigen(normalized_laplacian(g)).values;
}

int count_nontrivial_components(const GraphInstance& g) {
  std::vector<int> parent(static_cast<std::size_t>(g.n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (auto [u, v] : g.edges) parent[find(u)] = find(v);
  std::vector<bool> has_edge(static_cast<std::size_t>(g.n), false);
  for (auto [u, v] : g.edges) has_edge[u] = has_edge[v] = true;
  std::set<int> roots;
  for (int i = 0; i < g.n; ++i)
    if (has_edge[i]) roots.insert(find(i));
  return static_cast<int>(roots.size());
}

void fix_column_signs(Matrix& columns, double tol) {
  for (Eigen::Index c = 0; c < columns.cols(); ++c) {
    for (Eigen::Index r = 0; r < columns.rows(); ++r) {
      if (std::abs(columns(r, c)) > tol) {
        if (columns(r, c) < 0) columns.col(c) *= -1.0;
        break;
      }
    }
  }
}

SpectralEmbedding normalized_laplacian_eig(const GraphInstance& g, int k) {
  const int trivial = count_nontrivial_components(g);
  if (k < 0 || k > g.n - trivial || k > std::max(0, g.n - 1)) {
    throw InvalidArgument("k = " + std::to_string(k) + " exceeds the " +
                          std::to_string(std::max(0, g.n - trivial)) +
                          " available non-trivial eigenpairs");
  }
  const SymmetricEigen eig = jacobi_eigen(normalized_laplacian(g));
  SpectralEmbedding out{eig.vectors.middleCols(trivial, k), eig.values.segment(trivial, k)};
  for (Eigen::Index i = 0; i < out.eigenvalues.size(); ++i)
    out.eigenvalues(i) = std::clamp(out.eigenvalues(i), 0.0, 2.0);
  fix_column_signs(out.vectors);
  return out;
}

SvdEmbedding adjacency_svd(const GraphInstance& g, int k) {
  if (k < 0 || k > g.n) {
    throw InvalidArgument("k = " + std::to_string(k) + " exceeds node count " +
                          std::to_string(g.n));
  }
  // A is symmetric: singular triplets come from its eigenpairs with sigma = |lambda|.
  const SymmetricEigen eig = jacobi_eigen(g.adjacency());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(g.n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    return std::abs(eig.values(i)) > std::abs(eig.values(j));
  });
  Matrix u(g.n, k), v(g.n, k);
  Vector sigma(k);
  for (int c = 0; c < k; ++c) {
    const double lambda = eig.values(order[c]);
    u.col(c) = eig.vectors.col(order[c]);
    v.col(c) = (lambda < 0 ? -1.0 : 1.0) * u.col(c);
    sigma(c) = std::abs(lambda);
  }
  // Sign-fix on u and carry the same flip to v.
  for (int c = 0; c < k; ++c) {
    for (int r = 0; r < g.n; ++r) {
      if (std::abs(u(r, c)) > 1e-10) {
        if (u(r, c) < 0) {
          u.col(c) *= -1.0;
          v.col(c) *= -1.0;
        }
        break;
      }
    }
  }
  const Vector root = sigma.cwiseSqrt();
  return SvdEmbedding{u * root.asDiagonal(), v * root.asDiagonal(), sigma};
}

DistanceMatrix bfs_all_pairs(const GraphInstance& g) {
  DistanceMatrix out;
  out.n = g.n;
  out.dist.assign(static_cast<std::size_t>(g.n) * g.n, DistanceMatrix::kUnreachable);
  const auto adj = g.neighbors();
  std::deque<int> queue;
  for (int s = 0; s < g.n; ++s) {
    int* row = out.dist.data() + static_cast<std::size_t>(s) * g.n;
    row[s] = 0;
    queue.assign(1, s);
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      for (int w : adj[u]) {
        if (row[w] == DistanceMatrix::kUnreachable) {
          row[w] = row[u] + 1;
          queue.push_back(w);
        }
      }
    }
  }
  return out;
}

DegreeVectors degree_vectors(const GraphInstance& g) {
  const auto adj = g.neighbors();
  DegreeVectors out;
  out.in_deg.resize(static_cast<std::size_t>(g.n));
  for (int i = 0; i < g.n; ++i) out.in_deg[i] = static_cast<int>(adj[i].size());
  out.out_deg = out.in_deg;
  return out;
}

}  // namespace egtas
