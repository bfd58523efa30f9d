#include "egtas/search_space.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "egtas/error.hpp"

namespace egtas {

namespace {

constexpr std::array<const char*, kNumGenes> kGeneNames = {
    "topology", "combination", "gnn_block", "pe_set", "am_set", "scale"};

int index_of(const std::vector<std::string>& options, const std::string& value,
             const char* field) {
  auto it = std::find(options.begin(), options.end(), value);
  if (it == options.end()) throw UnknownOptionError(field, value);
  return static_cast<int>(it - options.begin());
}

bool same_subset(std::vector<std::string> a, std::vector<std::string> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

int subset_index(const std::vector<std::vector<std::string>>& options,
                 const std::vector<std::string>& value, const char* field) {
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (same_subset(options[i], value)) return static_cast<int>(i);
  }
  throw UnknownOptionError(field, format_subset(value));
}

}  // namespace

const char* gene_name(std::size_t position) {
  return position < kNumGenes ? kGeneNames[position] : "?";
}

std::string to_string(const ArchitectureEncoding& enc) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < kNumGenes; ++i) os << (i ? "," : "") << enc[i];
  os << ']';
  return os.str();
}

std::string format_subset(const std::vector<std::string>& subset) {
  if (subset.empty()) return "None";
  std::string out = "[";
  for (std::size_t i = 0; i < subset.size(); ++i) out += (i ? "," : "") + subset[i];
  return out + "]";
}

bool ArchitectureSpec::operator==(const ArchitectureSpec& other) const {
  return topology == other.topology && combination == other.combination &&
         gnn_block == other.gnn_block && same_subset(pe_set, other.pe_set) &&
         same_subset(am_set, other.am_set) && scale == other.scale;
}

const OperationTable& OperationTable::standard() {
  // Subset rows follow the listing order of the published operation table.
  static const OperationTable table{
      {"Vanilla", "JK", "Residual", "GCNII"},
      {"Before", "Alternate", "Parallel"},
      {"GCN", "SAGE", "GAT", "GATv2", "GIN", "None"},
      {{}, {"LE"}, {"SVD"}, {"DC"}, {"LE", "SVD"}, {"LE", "DC"}, {"SVD", "DC"}, {"LE", "SVD", "DC"}},
      {{}, {"PEM"}, {"SE"}, {"Mask"}, {"PEM", "SE"}, {"PEM", "Mask"}, {"SE", "Mask"},
       {"PEM", "SE", "Mask"}},
      {"Mini", "Small", "Middle", "Large"},
  };
  return table;
}

std::array<int, kNumGenes> OperationTable::bounds() const {
  return {static_cast<int>(topology_options.size()), static_cast<int>(combination_options.size()),
          static_cast<int>(gnn_options.size()),      static_cast<int>(pe_options.size()),
          static_cast<int>(am_options.size()),       static_cast<int>(scale_options.size())};
}

std::size_t OperationTable::cardinality() const {
  auto b = bounds();
  return std::accumulate(b.begin(), b.end(), std::size_t{1},
                         [](std::size_t acc, int x) { return acc * static_cast<std::size_t>(x); });
}

bool OperationTable::contains(const ArchitectureEncoding& enc) const {
  auto b = bounds();
  for (std::size_t i = 0; i < kNumGenes; ++i) {
    if (enc[i] < 0 || enc[i] >= b[i]) return false;
  }
  return true;
}

void validate(const ArchitectureEncoding& enc, const OperationTable& table) {
  auto b = table.bounds();
  for (std::size_t i = 0; i < kNumGenes; ++i) {
    if (enc[i] < 0 || enc[i] >= b[i]) throw OutOfBoundsError(i, enc[i], b[i]);
  }
}

ArchitectureEncoding encode(const ArchitectureSpec& spec, const OperationTable& table) {
  ArchitectureEncoding enc;
  enc[kTopologyGene] = index_of(table.topology_options, spec.topology, "topology");
  enc[kCombinationGene] = index_of(table.combination_options, spec.combination, "combination");
  enc[kGnnGene] = index_of(table.gnn_options, spec.gnn_block, "gnn_block");
  enc[kPeGene] = subset_index(table.pe_options, spec.pe_set, "pe_set");
  enc[kAmGene] = subset_index(table.am_options, spec.am_set, "am_set");
  enc[kScaleGene] = index_of(table.scale_options, spec.scale, "scale");
  return enc;
}

ArchitectureSpec decode(const ArchitectureEncoding& enc, const OperationTable& table) {
  validate(enc, table);
  return ArchitectureSpec{table.topology_options[enc[kTopologyGene]],
                          table.combination_options[enc[kCombinationGene]],
                          table.gnn_options[enc[kGnnGene]],
                          table.pe_options[enc[kPeGene]],
                          table.am_options[enc[kAmGene]],
                          table.scale_options[enc[kScaleGene]]};
}

ArchitectureEncoding sample_uniform(const OperationTable& table, SeededRng& rng) {
  auto b = table.bounds();
  ArchitectureEncoding enc;
  for (std::size_t i = 0; i < kNumGenes; ++i) enc[i] = rng.uniform_int(b[i]);
  return enc;
}

EncodingEnumerator::EncodingEnumerator(const OperationTable& table) : bounds_(table.bounds()) {
  done_ = std::any_of(bounds_.begin(), bounds_.end(), [](int b) { return b <= 0; });
}

std::optional<ArchitectureEncoding> EncodingEnumerator::next() {
  if (done_) return std::nullopt;
  ArchitectureEncoding out = current_;
  // odometer increment, last gene fastest
  std::size_t i = kNumGenes;
  while (i-- > 0) {
    if (++current_[i] < bounds_[i]) break;
    current_[i] = 0;
    if (i == 0) done_ = true;
  }
  return out;
}

EncodingEnumerator enumerate_all(const OperationTable& table) { return EncodingEnumerator(table); }

}  // namespace egtas
