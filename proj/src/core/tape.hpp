#pragma once

// Reverse-mode autodiff on a linear tape.
//
// Ops compute outputs eagerly and, when any input participates in
// differentiation (is a parameter or derives from one), push a backward
// closure onto the tape. backward() replays closures newest-first, so by the
// time a node runs, every consumer of its output has already deposited its
// contribution into the output's gradient buffer.
//
// Gradient buffers of intermediates are allocated lazily on first
// accumulation and released as soon as the producing closure has run, keeping
// the peak gradient footprint proportional to the graph's frontier rather
// than its full depth.

#include <functional>
#include <vector>

#include "tensor.hpp"

namespace add {

class Tape {
 public:
  // With recording disabled the ops become plain eager math (used for eval).
  void set_enabled(bool e) { enabled_ = e; }
  bool enabled() const { return enabled_; }

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)=1 and consumes the tape; each closure is destroyed right
  // after it runs so captured activations free incrementally.
  void backward(Tensor loss);

  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
  bool enabled_ = true;
};

namespace ops {

struct ConvSpec {
  int stride = 1;
  int dilation = 1;
  int groups = 1;    // 1 = dense, C = depthwise, anything dividing Cin in between
  int padding = -1;  // -1 = "same" padding dilation*(k-1)/2
};

// x: [N,Cin,H,W]; w: [Cout,Cin/groups,k,k] with odd square k. Cross-
// correlation, no bias (convs here are always followed by a normalization
// layer). Output size floor((H + 2p - dilation*(k-1) - 1)/stride) + 1.
Tensor conv2d(Tape&, const Tensor& x, const Tensor& w, const ConvSpec& spec = {});

// x: [N,D], w: [D,K], b: [K] -> [N,K] = x w + b
Tensor linear(Tape&, const Tensor& x, const Tensor& w, const Tensor& b);

// x: [N,C,H,W]; per-channel affine normalization. In training mode batch
// statistics are used and running_mean/var (shared storages) are updated in
// place with an exponential moving average; in eval mode running statistics
// are used and treated as constants. Training mode needs N*H*W >= 2.
Tensor batch_norm(Tape&, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training, real momentum = 0.1f,
                  real eps = 1e-5f);

Tensor relu(Tape&, const Tensor&);
Tensor sigmoid(Tape&, const Tensor&);

enum class PoolKind { Avg, Max };

// kxk pooling. Average pooling divides by the number of in-bounds cells
// (padding excluded); max pooling ignores padded cells entirely.
Tensor pool2d(Tape&, const Tensor&, PoolKind kind, int k, int stride, int padding);

// The search-space flavors: 3x3 window, "same" padding.
Tensor max_pool3(Tape&, const Tensor&, int stride);
Tensor avg_pool3(Tape&, const Tensor&, int stride);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(Tape&, const Tensor&);

// [N,C,h,w] -> [N,C,ho,wo], align_corners=true
Tensor bilinear_upsample(Tape&, const Tensor&, int ho, int wo);

Tensor add(Tape&, const Tensor&, const Tensor&);
Tensor sum(Tape&, const std::vector<Tensor>&);
Tensor mul(Tape&, const Tensor&, const Tensor&);

// y = alpha*a + beta*b, elementwise.
Tensor lincomb(Tape&, real alpha, const Tensor& a, real beta, const Tensor& b);

// x: [N,C,H,W] combined with a single-channel operand [N,1,H,W], broadcast
// over C; the broadcast operand's gradient is channel-summed.
Tensor mul_channel(Tape&, const Tensor& x, const Tensor& gate);
Tensor add_channel(Tape&, const Tensor& x, const Tensor& bias);

enum class EwKind { Add, Mul };

// Dispatches to the dense or channel-broadcast form by shape.
Tensor elementwise(Tape&, const Tensor& a, const Tensor& b, EwKind kind);

// Sum of every element -> scalar.
Tensor sum_all(Tape&, const Tensor&);

// Concatenate along the channel axis; all inputs share N,H,W.
Tensor concat_channels(Tape&, const std::vector<Tensor>&);

// Row-wise softmax of a [R,C] matrix.
Tensor softmax_rows(Tape&, const Tensor&);

// Extracts row r of a [R,C] matrix as a [C] vector; backward scatters into
// that row.
Tensor row(Tape&, const Tensor& m, int r);

// y = sum_j weights[index[j]] * items[j]; items share a shape, weights is
// flat. Lets a caller blend op outputs under selected softmax entries while
// skipping entries whose contribution is identically zero.
Tensor weighted_sum(Tape&, const std::vector<Tensor>& items, const Tensor& weights,
                    const std::vector<int>& index);

// Mean over the batch of -log softmax(logits)[label]. logits: [N,K].
Tensor cross_entropy(Tape&, const Tensor& logits, const std::vector<int>& labels);

// Mean over all elements of (pred - target)^2; target is a constant.
Tensor mse(Tape&, const Tensor& pred, const Tensor& target);

}  // namespace ops
}  // namespace add
