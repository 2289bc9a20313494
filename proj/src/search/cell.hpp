#pragma once

#include <vector>

#include "search/genotype.hpp"
#include "search/ops.hpp"

namespace add {

// Edges of a cell with B blocks are enumerated block-major: block i draws
// from candidate inputs 0..i+1 (0,1 = cell inputs, j+2 = block j output),
// so edge (i, h) sits at row i*(i+3)/2 + h of the logit table.
int num_edges(int blocks);
int edge_index(int block, int input);

// Architecture logits: one [num_edges(B), 11] table per cell type. Rows are
// edges, columns follow OpKind enum order. Both tables are leaf tensors.
struct ArchParams {
  int blocks = 0;
  Tensor normal = Tensor::zeros({1});
  Tensor reduce = Tensor::zeros({1});

  static ArchParams create(int blocks, Rng& rng);
};

// The continuous supernet cell: every edge holds all 11 candidate op
// instances. In a reduction cell, edges fed by the two cell inputs use
// stride 2; edges between blocks keep stride 1.
struct MixedCell {
  int blocks = 0;
  int channels = 0;
  bool reduction = false;
  std::vector<std::vector<OpInstance>> edge_ops;  // [edge][kind]

  static MixedCell create(int blocks, int channels, bool reduction, Rng& rng);
};

// Eq.-2-style forward: per block, sum over candidate inputs of the
// softmax(alpha)-weighted mixture of op outputs; Zero contributes exactly
// nothing but stays in the softmax denominator. Inputs must already be
// channel- and resolution-matched to the cell. Returns the concatenation of
// all block outputs ([N, B*C, H', W']).
Tensor mixed_forward(Tape& tape, MixedCell& cell, const Tensor& alpha_table, const Tensor& in0,
                     const Tensor& in1, bool training);

// Per block, selects the two strongest (input, op != Zero) pairs under the
// row softmax, at most one edge per candidate input; ties break toward the
// lower input index, then the lower OpKind enum value.
Genotype discretize(const ArchParams& alpha);

}  // namespace add
