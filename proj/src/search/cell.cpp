#include "cell.hpp"

#include <algorithm>
#include <cmath>

namespace add {

int num_edges(int blocks) { return blocks * (blocks + 3) / 2; }

int edge_index(int block, int input) {
  ADD_CHECK_ARG(block >= 0, "negative block index %d", block);
  ADD_CHECK_ARG(input >= 0 && input < block + 2, "block %d has no candidate input %d", block,
                input);
  return block * (block + 3) / 2 + input;
}

ArchParams ArchParams::create(int blocks, Rng& rng) {
  ADD_CHECK_ARG(blocks >= 1, "need at least one block, got %d", blocks);
  ArchParams a;
  a.blocks = blocks;
  const int e = num_edges(blocks);
  for (Tensor* t : {&a.normal, &a.reduce}) {
    *t = Tensor::empty({e, kNumOpKinds});
    for (int64_t i = 0; i < t->numel(); ++i)
      t->data()[i] = static_cast<real>(rng.normal() * 1e-3);
    t->set_requires_grad();
  }
  return a;
}

MixedCell MixedCell::create(int blocks, int channels, bool reduction, Rng& rng) {
  ADD_CHECK_ARG(blocks >= 1, "need at least one block, got %d", blocks);
  MixedCell cell;
  cell.blocks = blocks;
  cell.channels = channels;
  cell.reduction = reduction;
  cell.edge_ops.resize(static_cast<size_t>(num_edges(blocks)));
  for (int i = 0; i < blocks; ++i)
    for (int h = 0; h < i + 2; ++h) {
      const int stride = (reduction && h < 2) ? 2 : 1;
      auto& ops = cell.edge_ops[static_cast<size_t>(edge_index(i, h))];
      ops.reserve(kNumOpKinds);
      for (OpKind kind : kAllOpKinds) ops.push_back(build_op(kind, channels, stride, rng));
    }
  return cell;
}

Tensor mixed_forward(Tape& tape, MixedCell& cell, const Tensor& alpha_table, const Tensor& in0,
                     const Tensor& in1, bool training) {
  ADD_CHECK_ARG(alpha_table.rank() == 2 && alpha_table.dim(0) == num_edges(cell.blocks) &&
                    alpha_table.dim(1) == kNumOpKinds,
                "alpha table shape %s does not match cell (%d blocks)",
                shape_str(alpha_table.shape()).c_str(), cell.blocks);
  for (const Tensor* in : {&in0, &in1})
    ADD_CHECK_ARG(in->rank() == 4 && in->dim(1) == cell.channels,
                  "cell input shape %s does not provide %d channels",
                  shape_str(in->shape()).c_str(), cell.channels);

  Tensor weights = ops::softmax_rows(tape, alpha_table);

  std::vector<Tensor> states{in0, in1};
  std::vector<Tensor> block_outputs;
  for (int i = 0; i < cell.blocks; ++i) {
    std::vector<Tensor> edge_results;
    for (int h = 0; h < i + 2; ++h) {
      const int e = edge_index(i, h);
      auto& candidates = cell.edge_ops[static_cast<size_t>(e)];
      Tensor wrow = ops::row(tape, weights, e);
      std::vector<Tensor> items;
      std::vector<int> index;
      for (int k = 0; k < kNumOpKinds; ++k) {
        if (candidates[static_cast<size_t>(k)].kind == OpKind::Zero) continue;
        items.push_back(
            apply_op(tape, candidates[static_cast<size_t>(k)], states[static_cast<size_t>(h)],
                     training));
        index.push_back(k);
      }
      edge_results.push_back(ops::weighted_sum(tape, items, wrow, index));
    }
    Tensor block = edge_results.size() == 1 ? edge_results[0] : ops::sum(tape, edge_results);
    states.push_back(block);
    block_outputs.push_back(block);
  }
  return ops::concat_channels(tape, block_outputs);
}

namespace {

struct Candidate {
  double weight;
  int input;
  int op;
};

void discretize_side(const Tensor& table, int blocks,
                     std::vector<std::array<GenotypeEdge, 2>>& out) {
  out.clear();
  for (int i = 0; i < blocks; ++i) {
    std::vector<Candidate> cands;
    for (int h = 0; h < i + 2; ++h) {
      const real* logits = table.data() + static_cast<size_t>(edge_index(i, h)) * kNumOpKinds;
      real mx = logits[0];
      for (int k = 1; k < kNumOpKinds; ++k) mx = std::max(mx, logits[k]);
      double denom = 0;
      for (int k = 0; k < kNumOpKinds; ++k) denom += std::exp(static_cast<double>(logits[k] - mx));
      for (int k = 0; k < kNumOpKinds; ++k) {
        if (static_cast<OpKind>(k) == OpKind::Zero) continue;
        cands.push_back({std::exp(static_cast<double>(logits[k] - mx)) / denom, h, k});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      if (a.input != b.input) return a.input < b.input;
      return a.op < b.op;
    });
    std::array<GenotypeEdge, 2> picked{};
    int taken = 0;
    std::vector<bool> used(static_cast<size_t>(i) + 2, false);
    for (const Candidate& c : cands) {
      if (used[static_cast<size_t>(c.input)]) continue;
      used[static_cast<size_t>(c.input)] = true;
      picked[static_cast<size_t>(taken++)] = {c.input, static_cast<OpKind>(c.op)};
      if (taken == 2) break;
    }
    ADD_CHECK(taken == 2, ErrorCode::InvalidArgument,
              "block %d has fewer than two usable candidate inputs", i);
    out.push_back(picked);
  }
}

}  // namespace

Genotype discretize(const ArchParams& alpha) {
  ADD_CHECK_ARG(alpha.blocks >= 1, "need at least one block, got %d", alpha.blocks);
  Genotype g;
  g.blocks = alpha.blocks;
  discretize_side(alpha.normal, alpha.blocks, g.normal);
  discretize_side(alpha.reduce, alpha.blocks, g.reduce);
  validate_genotype(g);
  return g;
}

}  // namespace add
