#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "egtas/rng.hpp"

namespace egtas {

/// Number of genes in a chromosome: topology, combination, gnn, pe, am, scale.
inline constexpr std::size_t kNumGenes = 6;

enum Gene : std::size_t {
  kTopologyGene = 0,
  kCombinationGene = 1,
  kGnnGene = 2,
  kPeGene = 3,
  kAmGene = 4,
  kScaleGene = 5,
};

const char* gene_name(std::size_t position);

/// Fixed-length integer chromosome; each gene indexes a row of the operation table.
struct ArchitectureEncoding {
  std::array<int, kNumGenes> genes{};

  int& operator[](std::size_t i) { return genes[i]; }
  int operator[](std::size_t i) const { return genes[i]; }
  friend auto operator<=>(const ArchitectureEncoding&, const ArchitectureEncoding&) = default;
};

std::string to_string(const ArchitectureEncoding& enc);

/// Human-readable architecture. Set-valued fields hold base operation names.
struct ArchitectureSpec {
  std::string topology;
  std::string combination;
  std::string gnn_block;
  std::vector<std::string> pe_set;
  std::vector<std::string> am_set;
  std::string scale;

  bool operator==(const ArchitectureSpec& other) const;
};

/// The menu of candidate operations, one ordered row per gene.
struct OperationTable {
  std::vector<std::string> topology_options;
  std::vector<std::string> combination_options;
  std::vector<std::string> gnn_options;
  std::vector<std::vector<std::string>> pe_options;
  std::vector<std::vector<std::string>> am_options;
  std::vector<std::string> scale_options;

  /// The unified macro/micro search space.
  static const OperationTable& standard();

  std::array<int, kNumGenes> bounds() const;
  /// Product of the bounds.
  std::size_t cardinality() const;
  bool contains(const ArchitectureEncoding& enc) const;
};

/// Throws OutOfBoundsError for the first gene that violates its bound.
void validate(const ArchitectureEncoding& enc, const OperationTable& table);

ArchitectureEncoding encode(const ArchitectureSpec& spec, const OperationTable& table);
ArchitectureSpec decode(const ArchitectureEncoding& enc, const OperationTable& table);

/// Each gene drawn independently and uniformly.
ArchitectureEncoding sample_uniform(const OperationTable& table, SeededRng& rng);

/// Walks the whole space in lexicographic gene order.
class EncodingEnumerator {
 public:
  explicit EncodingEnumerator(const OperationTable& table);
  std::optional<ArchitectureEncoding> next();

 private:
  std::array<int, kNumGenes> bounds_;
  ArchitectureEncoding current_{};
  bool done_ = false;
};

EncodingEnumerator enumerate_all(const OperationTable& table);

/// Formats a subset as "None" or "[LE,SVD]".
std::string format_subset(const std::vector<std::string>& subset);

}  // namespace egtas
