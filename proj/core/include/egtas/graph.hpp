#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

namespace egtas {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SplitMasks {
  std::vector<bool> train;
  std::vector<bool> val;
  std::vector<bool> test;

  bool operator==(const SplitMasks&) const = default;
};

/// One undirected graph with node features and optional labels/splits.
struct GraphInstance {
  int n = 0;
  std::vector<std::pair<int, int>> edges;
  Matrix features;  // n x d0
  std::optional<std::vector<int>> node_labels;
  std::optional<double> graph_label;
  std::optional<SplitMasks> split_masks;

  /// Throws InvalidArgument on self-loops, bad endpoints, feature row mismatch,
  /// or overlapping split masks.
  void validate() const;
  int feature_dim() const { return static_cast<int>(features.cols()); }
  Matrix adjacency() const;
  std::vector<std::vector<int>> neighbors() const;
};

bool structurally_equal(const GraphInstance& a, const GraphInstance& b);

/// Laplacian-eigenvector embedding; columns orthonormal, eigenvalues ascending.
struct SpectralEmbedding {
  Matrix vectors;  // n x k
  Vector eigenvalues;
};

/// Top-k factors of the adjacency matrix, A ~= left * right^T.
struct SvdEmbedding {
  Matrix left;   // U sqrt(S)
  Matrix right;  // V sqrt(S)
  Vector singular_values;
};

/// All-pairs hop distances.
struct DistanceMatrix {
  static constexpr int kUnreachable = -1;
  int n = 0;
  std::vector<int> dist;  // row-major n x n

  int operator()(int i, int j) const { return dist[static_cast<std::size_t>(i) * n + j]; }
  bool reachable(int i, int j) const { return (*this)(i, j) != kUnreachable; }
  /// Largest finite distance.
  int diameter() const;
};

struct SymmetricEigen {
  Vector values;   // ascending
  Matrix vectors;  // columns
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymmetricEigen jacobi_eigen(const Matrix& symmetric, double tolerance = 1e-14,
                            int max_sweeps = 100);

/// I - D^{-1/2} A D^{-1/2}; degree-zero nodes use D^{-1/2} = 0.
Matrix normalized_laplacian(const GraphInstance& g);

/// Full spectrum of the normalized Laplacian, ascending.
Vector laplacian_spectrum(const GraphInstance& g);

/// Connected components with at least one edge; each contributes one trivial zero eigenvalue.
int count_nontrivial_components(const GraphInstance& g);

SpectralEmbedding normalized_laplacian_eig(const GraphInstance& g, int k);
SvdEmbedding adjacency_svd(const GraphInstance& g, int k);
DistanceMatrix bfs_all_pairs(const GraphInstance& g);

struct DegreeVectors {
  std::vector<int> in_deg;
  std::vector<int> out_deg;
};
DegreeVectors degree_vectors(const GraphInstance& g);

/// Flip each column so its first entry with |x| > tol is positive.
void fix_column_signs(Matrix& columns, double tol = 1e-10);

}  // namespace egtas
