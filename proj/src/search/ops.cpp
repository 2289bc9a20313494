#include "ops.hpp"

#include <cmath>

namespace add {

namespace {

constexpr std::array<std::string_view, kNumOpKinds> kOpNames = {
    "zero",       "identity",   "avg_pool_3",     "max_pool_3",
    "conv_3",     "conv_5",     "conv_7",         "sep_conv_3",
    "sep_conv_5", "dil_sep_conv_3", "dil_sep_conv_5",
};

struct KindInfo {
  int kernel = 0;    // conv kernel size, 0 for non-conv
  int dilation = 1;  // depthwise dilation for separable kinds
  bool separable = false;
};

KindInfo kind_info(OpKind kind) {
  switch (kind) {
    case OpKind::Conv3: return {3, 1, false};
    case OpKind::Conv5: return {5, 1, false};
    case OpKind::Conv7: return {7, 1, false};
    case OpKind::SepConv3: return {3, 1, true};
    case OpKind::SepConv5: return {5, 1, true};
    case OpKind::DilSepConv3: return {3, 2, true};
    case OpKind::DilSepConv5: return {5, 2, true};
    default: return {};
  }
}

// Appends gamma, beta to params and running mean/var to buffers.
void add_norm(OpInstance& op) {
  op.params.push_back(Tensor::full({op.channels}, real(1)));
  op.params.push_back(Tensor::zeros({op.channels}));
  op.buffers.push_back(Tensor::zeros({op.channels}));
  op.buffers.push_back(Tensor::full({op.channels}, real(1)));
}

Tensor norm_of(Tape& tape, OpInstance& op, const Tensor& y, size_t gamma_at, bool training) {
  return ops::batch_norm(tape, y, op.params[gamma_at], op.params[gamma_at + 1], op.buffers[0],
                         op.buffers[1], training);
}

}  // namespace

Tensor fan_in_uniform(Rng& rng, Shape shape, int fan_in) {
  ADD_CHECK_ARG(fan_in >= 1, "fan_in must be >= 1, got %d", fan_in);
  Tensor t = Tensor::empty(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<real>(rng.uniform(-bound, bound));
  return t;
}

std::string_view op_kind_name(OpKind kind) {
  const int i = static_cast<int>(kind);
  ADD_CHECK_ARG(i >= 0 && i < kNumOpKinds, "invalid OpKind value %d", i);
  return kOpNames[static_cast<size_t>(i)];
}

OpKind op_kind_from_name(std::string_view name) {
  for (int i = 0; i < kNumOpKinds; ++i)
    if (kOpNames[static_cast<size_t>(i)] == name) return static_cast<OpKind>(i);
  fail(ErrorCode::Format, strformat("unknown operation name \"%.*s\"",
                                    static_cast<int>(name.size()), name.data()));
}

OpInstance build_op(OpKind kind, int channels, int stride, Rng& rng) {
  ADD_CHECK_ARG(channels >= 1, "channels must be >= 1, got %d", channels);
  ADD_CHECK_ARG(stride == 1 || stride == 2, "stride must be 1 or 2, got %d", stride);
  OpInstance op;
  op.kind = kind;
  op.channels = channels;
  op.stride = stride;
  const int c = channels;
  switch (kind) {
    case OpKind::Zero:
    case OpKind::AvgPool3:
    case OpKind::MaxPool3:
      break;
    case OpKind::Identity:
      if (stride == 2) {
        op.params.push_back(fan_in_uniform(rng, {c, c, 1, 1}, c));
        add_norm(op);
      }
      break;
    case OpKind::Conv3:
    case OpKind::Conv5:
    case OpKind::Conv7: {
      const int k = kind_info(kind).kernel;
      op.params.push_back(fan_in_uniform(rng, {c, c, k, k}, c * k * k));
      add_norm(op);
      break;
    }
    case OpKind::SepConv3:
    case OpKind::SepConv5:
    case OpKind::DilSepConv3:
    case OpKind::DilSepConv5: {
      const int k = kind_info(kind).kernel;
      op.params.push_back(fan_in_uniform(rng, {c, 1, k, k}, k * k));  // depthwise
      op.params.push_back(fan_in_uniform(rng, {c, c, 1, 1}, c));      // pointwise
      add_norm(op);
      break;
    }
  }
  for (Tensor& p : op.params) p.set_requires_grad();
  return op;
}

Tensor apply_op(Tape& tape, OpInstance& op, const Tensor& x, bool training) {
  ADD_CHECK_ARG(x.rank() == 4, "op input must be rank 4, got rank %d", x.rank());
  ADD_CHECK_ARG(x.dim(1) == op.channels, "op expects %d channels, got %d", op.channels,
                static_cast<int>(x.dim(1)));
  const int s = op.stride;
  switch (op.kind) {
    case OpKind::Zero: {
      const int ho = static_cast<int>((x.dim(2) + s - 1) / s);
      const int wo = static_cast<int>((x.dim(3) + s - 1) / s);
      return Tensor::zeros({x.dim(0), x.dim(1), ho, wo});
    }
    case OpKind::Identity: {
      if (s == 1) return x;
      Tensor y = ops::relu(tape, x);
      y = ops::conv2d(tape, y, op.params[0], {.stride = 2});
      return norm_of(tape, op, y, 1, training);
    }
    case OpKind::AvgPool3:
      return ops::avg_pool3(tape, x, s);
    case OpKind::MaxPool3:
      return ops::max_pool3(tape, x, s);
    case OpKind::Conv3:
    case OpKind::Conv5:
    case OpKind::Conv7: {
      Tensor y = ops::relu(tape, x);
      y = ops::conv2d(tape, y, op.params[0], {.stride = s});
      return norm_of(tape, op, y, 1, training);
    }
    case OpKind::SepConv3:
    case OpKind::SepConv5:
    case OpKind::DilSepConv3:
    case OpKind::DilSepConv5: {
      const KindInfo info = kind_info(op.kind);
      Tensor y = ops::relu(tape, x);
      y = ops::conv2d(tape, y, op.params[0],
                      {.stride = s, .dilation = info.dilation, .groups = op.channels});
      y = ops::conv2d(tape, y, op.params[1], {});
      return norm_of(tape, op, y, 2, training);
    }
  }
  fail(ErrorCode::InvalidArgument,
       strformat("invalid OpKind value %d", static_cast<int>(op.kind)));
}

int64_t param_count(OpKind kind, int channels, int stride) {
  const int64_t c = channels;
  switch (kind) {
    case OpKind::Zero:
    case OpKind::AvgPool3:
    case OpKind::MaxPool3:
      return 0;
    case OpKind::Identity:
      return stride == 2 ? c * c + 2 * c : 0;
    case OpKind::Conv3:
    case OpKind::Conv5:
    case OpKind::Conv7: {
      const int64_t k = kind_info(kind).kernel;
      return c * c * k * k + 2 * c;
    }
    case OpKind::SepConv3:
    case OpKind::SepConv5:
    case OpKind::DilSepConv3:
    case OpKind::DilSepConv5: {
      const int64_t k = kind_info(kind).kernel;
      return c * k * k + c * c + 2 * c;
    }
  }
  fail(ErrorCode::InvalidArgument,
       strformat("invalid OpKind value %d", static_cast<int>(kind)));
}

std::vector<std::string> op_param_names(OpKind kind, int stride, const std::string& prefix) {
  switch (kind) {
    case OpKind::Zero:
    case OpKind::AvgPool3:
    case OpKind::MaxPool3:
      return {};
    case OpKind::Identity:
      if (stride != 2) return {};
      return {prefix + ".w", prefix + ".gamma", prefix + ".beta"};
    case OpKind::Conv3:
    case OpKind::Conv5:
    case OpKind::Conv7:
      return {prefix + ".w", prefix + ".gamma", prefix + ".beta"};
    case OpKind::SepConv3:
    case OpKind::SepConv5:
    case OpKind::DilSepConv3:
    case OpKind::DilSepConv5:
      return {prefix + ".dw", prefix + ".pw", prefix + ".gamma", prefix + ".beta"};
  }
  fail(ErrorCode::InvalidArgument,
       strformat("invalid OpKind value %d", static_cast<int>(kind)));
}

}  // namespace add
