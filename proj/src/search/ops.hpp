#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"

namespace add {

// The 11 candidate operations, in fixed enum order. This order is load-bearing:
// discretization ties break toward the lower enum value, and architecture
// logit tables index by it.
enum class OpKind : int {
  Zero = 0,
  Identity,
  AvgPool3,
  MaxPool3,
  Conv3,
  Conv5,
  Conv7,
  SepConv3,
  SepConv5,
  DilSepConv3,
  DilSepConv5,
};

inline constexpr int kNumOpKinds = 11;

inline constexpr std::array<OpKind, kNumOpKinds> kAllOpKinds = {
    OpKind::Zero,     OpKind::Identity, OpKind::AvgPool3,    OpKind::MaxPool3,
    OpKind::Conv3,    OpKind::Conv5,    OpKind::Conv7,       OpKind::SepConv3,
    OpKind::SepConv5, OpKind::DilSepConv3, OpKind::DilSepConv5,
};

// Serialized names are lowercase snake_case, e.g. "dil_sep_conv_3".
std::string_view op_kind_name(OpKind kind);

// Inverse of op_kind_name; throws Error(Format) for unknown names.
OpKind op_kind_from_name(std::string_view name);

// One candidate operation instance with its parameters. `params` holds the
// learnable tensors in a fixed per-kind order (conv weights first, then
// batch-norm gamma/beta); `buffers` holds batch-norm running statistics.
// `param_names()` mirrors the `params` order.
struct OpInstance {
  OpKind kind = OpKind::Zero;
  int channels = 0;
  int stride = 1;
  std::vector<Tensor> params;
  std::vector<Tensor> buffers;
};

// Conv-weight initialization shared across the code base: uniform on
// [-sqrt(6/fan_in), sqrt(6/fan_in)].
Tensor fan_in_uniform(Rng& rng, Shape shape, int fan_in);

// Builds an op with freshly initialized parameters (fan-in-scaled uniform
// conv weights, identity-affine batch norm). Throws Error(InvalidArgument)
// for channels < 1 or stride outside {1, 2}.
OpInstance build_op(OpKind kind, int channels, int stride, Rng& rng);

// Applies the op. Output is [N, C, ceil(H/stride), ceil(W/stride)].
// Throws Error(InvalidArgument) on channel mismatch.
Tensor apply_op(Tape& tape, OpInstance& op, const Tensor& x, bool training);

// Exact number of learnable scalars allocated by build_op(kind, channels,
// stride). Stride matters only for Identity, which becomes a strided 1x1
// conv + norm at stride 2.
int64_t param_count(OpKind kind, int channels, int stride = 1);

// Names for checkpoint blobs, matching OpInstance::params order, each
// prefixed with `prefix` (e.g. "cell0.b1.e3.w1").
std::vector<std::string> op_param_names(OpKind kind, int stride, const std::string& prefix);

}  // namespace add
