#pragma once

// Detector assembly and the dual-task objective.
//
// A detector is: stem (3x3 conv + norm) -> a sequence of cells -> two heads
// sharing one single-channel attention map. Detection blocks of `stack_n`
// normal cells alternate with reduction cells; the channel count doubles at
// each reduction. Each cell consumes the outputs of the two preceding cells
// (both equal to the stem output at the start), adapted by per-input
// preprocessing units (relu -> 1x1 conv -> norm, strided when that input is
// spatially twice the cell's working size).
//
// The same skeleton serves two purposes: a discrete detector built from a
// Genotype (retraining / evaluation) and a search supernet whose cell slots
// hold MixedCells blended under architecture logits.

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "search/cell.hpp"
#include "search/genotype.hpp"
#include "search/ops.hpp"

namespace add {

struct NetworkConfig {
  int stack_n = 1;        // normal cells per detection block
  int num_d2_blocks = 3;  // detection blocks; reduction cells sit between them
  int stem_channels = 16;
  int input_h = 32;
  int input_w = 32;
  int num_classes = 2;  // real vs fake; fixed
  real lambda_mask = 1;  // weight of the mask loss inside loss_overall

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Throws Error(Config) on invalid fields; the divisibility message names the
// offending dimension.
void validate_network_config(const NetworkConfig& config);

std::string network_config_to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const std::string& text);

// Input-adaptation unit: relu -> 1x1 conv (possibly strided) -> norm.
struct Preproc {
  int stride = 1;
  std::vector<Tensor> params;   // w, gamma, beta
  std::vector<Tensor> buffers;  // running mean, running var
};

// A cell fixed to a genotype: per block, the two selected edges with their
// op instances (strided on edges fed by the cell inputs of a reduction cell).
struct DiscreteCell {
  int blocks = 0;
  int channels = 0;
  bool reduction = false;
  std::vector<std::array<GenotypeEdge, 2>> edges;
  std::vector<std::array<OpInstance, 2>> ops;
};

// One slot of the body; exactly one of `fixed` / `mixed` is populated.
struct CellSlot {
  bool reduction = false;
  int channels = 0;
  Preproc pre0, pre1;
  std::optional<DiscreteCell> fixed;
  std::optional<MixedCell> mixed;
};

// Classification and localization heads. Both read the same single-channel
// attention map produced by `attn_w` (1x1 conv over the backbone features).
struct Head {
  Tensor attn_w;         // [1, C_feat, 1, 1]
  Tensor fc1_w, fc1_b;   // [C_feat, hidden], [hidden]
  Tensor fc2_w, fc2_b;   // [hidden, num_classes], [num_classes]
};

struct Detector {
  NetworkConfig config;
  int blocks = 0;  // blocks per cell
  std::vector<Tensor> stem_params;   // w, gamma, beta
  std::vector<Tensor> stem_buffers;  // running mean, running var
  std::vector<CellSlot> cells;
  Head head;

  bool supernet() const { return !cells.empty() && cells.front().mixed.has_value(); }

  // Learnable tensors in a fixed, documented order (the checkpoint order).
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  // Batch-norm running statistics, same naming scheme.
  std::vector<std::pair<std::string, Tensor>> named_buffers() const;
  std::vector<Tensor> params() const;
  int64_t param_count() const;
};

// Builds a discrete detector from a genotype. All conv/linear weights are
// fan-in-scaled uniform draws from `rng`; norms start as identity.
Detector assemble(const Genotype& genotype, const NetworkConfig& config, Rng& rng);

// Builds the search supernet: every slot holds a MixedCell over all candidate
// edges and ops. Architecture logits live outside (ArchParams).
Detector assemble_supernet(int blocks, const NetworkConfig& config, Rng& rng);

struct DetectorOutput {
  Tensor logits;            // [N, num_classes]
  Tensor mask;              // [N,1,h,w] input-resolution localization map
  Tensor feature_map_mask;  // [N,1,h',w'] attention map at feature resolution
  Tensor features;          // [N,C,h',w'] backbone output before masking
};

// Runs a discrete detector. Throws Error(InvalidArgument) when the batch is
// not [N,3,input_h,input_w].
DetectorOutput forward(Tape& tape, Detector& det, const Tensor& batch, bool training);

// Runs the supernet under the given architecture logits.
DetectorOutput forward_mixed(Tape& tape, Detector& det, const ArchParams& alpha,
                             const Tensor& batch, bool training);

// The classification tail: global average pool -> FC -> relu -> FC. Exposed
// so the masked and unmasked readings of the same features can be compared.
Tensor classify_features(Tape& tape, const Head& head, const Tensor& feature_map);

// Mean cross-entropy of the masked-feature logits. Labels must be 0 or 1.
Tensor loss_ce_masked(Tape& tape, const DetectorOutput& out, const std::vector<int>& labels);

// Mean squared error between the upsampled mask and its target.
Tensor loss_mask(Tape& tape, const DetectorOutput& out, const Tensor& mask_gt);

// loss_ce_masked + lambda_mask * loss_mask. Throws Error(Config) when
// lambda_mask < 0.
Tensor loss_overall(Tape& tape, const DetectorOutput& out, const std::vector<int>& labels,
                    const Tensor& mask_gt, real lambda_mask);

}  // namespace add
