#pragma once

#include <array>
#include <string>
#include <vector>

#include "search/ops.hpp"

namespace add {

// One selected edge of a discrete cell: which candidate input feeds it and
// which operation transforms it. Input indices: 0 and 1 are the two cell
// inputs; block j's output is index j + 2.
struct GenotypeEdge {
  int input = 0;
  OpKind op = OpKind::Identity;

  friend bool operator==(const GenotypeEdge&, const GenotypeEdge&) = default;
};

// A discretized architecture: per block, the two selected edges, for the
// normal cell and the reduction cell.
struct Genotype {
  int blocks = 0;
  std::vector<std::array<GenotypeEdge, 2>> normal;
  std::vector<std::array<GenotypeEdge, 2>> reduce;

  friend bool operator==(const Genotype&, const Genotype&) = default;
};

// Structural checks: entry counts match `blocks`, input indices within
// range, no Zero ops. Throws Error(Format) on violation.
void validate_genotype(const Genotype& g);

// JSON round-trip. Layout:
//   {"blocks": B,
//    "normal": [[{"input": 0, "op": "sep_conv_3"}, {...}], ...],
//    "reduce": [...]}
std::string genotype_to_json(const Genotype& g);
Genotype genotype_from_json(const std::string& text);

// Graphviz rendering with one subgraph per cell type; nodes are the two
// inputs plus one node per block, edges labeled with op names.
std::string genotype_to_dot(const Genotype& g);

}  // namespace add
