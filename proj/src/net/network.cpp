#include "network.hpp"

#include <cmath>

#include <json.hpp>

namespace add {

namespace {

using nlohmann::json;

// Spatial stride factor accumulated by the reduction cells in front of the
// final feature map.
int total_reduction_factor(const NetworkConfig& c) { return 1 << (c.num_d2_blocks - 1); }

Preproc make_preproc(int in_channels, int out_channels, int stride, Rng& rng) {
  Preproc p;
  p.stride = stride;
  p.params.push_back(fan_in_uniform(rng, {out_channels, in_channels, 1, 1}, in_channels));
  p.params.push_back(Tensor::full({out_channels}, real(1)));
  p.params.push_back(Tensor::zeros({out_channels}));
  p.buffers.push_back(Tensor::zeros({out_channels}));
  p.buffers.push_back(Tensor::full({out_channels}, real(1)));
  for (Tensor& t : p.params) t.set_requires_grad();
  return p;
}

Tensor preproc_forward(Tape& tape, Preproc& p, const Tensor& x, bool training) {
  Tensor y = ops::relu(tape, x);
  y = ops::conv2d(tape, y, p.params[0], {.stride = p.stride});
  return ops::batch_norm(tape, y, p.params[1], p.params[2], p.buffers[0], p.buffers[1],
                         training);
}

DiscreteCell make_discrete_cell(const Genotype& g, bool reduction, int channels, Rng& rng) {
  DiscreteCell cell;
  cell.blocks = g.blocks;
  cell.channels = channels;
  cell.reduction = reduction;
  cell.edges = reduction ? g.reduce : g.normal;
  for (int i = 0; i < g.blocks; ++i) {
    std::array<OpInstance, 2> pair;
    for (int k = 0; k < 2; ++k) {
      const GenotypeEdge e = cell.edges[static_cast<size_t>(i)][static_cast<size_t>(k)];
      const int stride = (reduction && e.input < 2) ? 2 : 1;
      pair[static_cast<size_t>(k)] = build_op(e.op, channels, stride, rng);
    }
    cell.ops.push_back(std::move(pair));
  }
  return cell;
}

Tensor discrete_cell_forward(Tape& tape, DiscreteCell& cell, const Tensor& in0,
                             const Tensor& in1, bool training) {
  std::vector<Tensor> states = {in0, in1};
  std::vector<Tensor> block_outputs;
  for (int i = 0; i < cell.blocks; ++i) {
    std::vector<Tensor> terms;
    for (int k = 0; k < 2; ++k) {
      const GenotypeEdge e = cell.edges[static_cast<size_t>(i)][static_cast<size_t>(k)];
      terms.push_back(apply_op(tape, cell.ops[static_cast<size_t>(i)][static_cast<size_t>(k)],
                               states[static_cast<size_t>(e.input)], training));
    }
    Tensor out = ops::add(tape, terms[0], terms[1]);
    states.push_back(out);
    block_outputs.push_back(out);
  }
  return ops::concat_channels(tape, block_outputs);
}

// Builds the shared skeleton (stem, preprocessing, channel schedule, head);
// `make_cell` fills in each slot's cell for the given channels/reduction.
template <typename MakeCell>
Detector assemble_skeleton(int blocks, const NetworkConfig& config, Rng& rng,
                           MakeCell&& make_cell) {
  validate_network_config(config);
  Detector det;
  det.config = config;
  det.blocks = blocks;

  const int s = config.stem_channels;
  det.stem_params.push_back(fan_in_uniform(rng, {s, 3, 3, 3}, 3 * 3 * 3));
  det.stem_params.push_back(Tensor::full({s}, real(1)));
  det.stem_params.push_back(Tensor::zeros({s}));
  det.stem_buffers.push_back(Tensor::zeros({s}));
  det.stem_buffers.push_back(Tensor::full({s}, real(1)));
  for (Tensor& t : det.stem_params) t.set_requires_grad();

  int c = config.stem_channels;  // working channel count of the current cell
  int ch0 = s, ch1 = s;          // channel counts of the two live states
  bool state0_larger = false;    // state 0 at twice the spatial size of state 1?

  auto push_slot = [&](bool reduction) {
    CellSlot slot;
    slot.reduction = reduction;
    slot.channels = c;
    slot.pre0 = make_preproc(ch0, c, state0_larger ? 2 : 1, rng);
    slot.pre1 = make_preproc(ch1, c, 1, rng);
    make_cell(slot, c, reduction);
    det.cells.push_back(std::move(slot));
    ch0 = ch1;
    ch1 = blocks * c;
    state0_larger = reduction;
  };

  for (int d2 = 0; d2 < config.num_d2_blocks; ++d2) {
    for (int k = 0; k < config.stack_n; ++k) push_slot(false);
    if (d2 + 1 < config.num_d2_blocks) {
      c *= 2;
      push_slot(true);
    }
  }

  const int feat_channels = blocks * c;
  const int hidden = config.stem_channels * 4;
  det.head.attn_w = fan_in_uniform(rng, {1, feat_channels, 1, 1}, feat_channels);
  det.head.fc1_w = fan_in_uniform(rng, {feat_channels, hidden}, feat_channels);
  det.head.fc1_b = Tensor::zeros({hidden});
  det.head.fc2_w = fan_in_uniform(rng, {hidden, config.num_classes}, hidden);
  det.head.fc2_b = Tensor::zeros({config.num_classes});
  for (Tensor* t : {&det.head.attn_w, &det.head.fc1_w, &det.head.fc1_b, &det.head.fc2_w,
                    &det.head.fc2_b})
    t->set_requires_grad();
  return det;
}

DetectorOutput run_forward(Tape& tape, Detector& det, const ArchParams* alpha,
                           const Tensor& batch, bool training) {
  ADD_CHECK_ARG(batch.rank() == 4 && batch.dim(1) == 3, "batch must be [N,3,h,w]");
  ADD_CHECK_ARG(batch.dim(2) == det.config.input_h && batch.dim(3) == det.config.input_w,
                "batch is %dx%d but the detector expects %dx%d", batch.dim(2), batch.dim(3),
                det.config.input_h, det.config.input_w);

  Tensor y = ops::conv2d(tape, batch, det.stem_params[0], {});
  y = ops::batch_norm(tape, y, det.stem_params[1], det.stem_params[2], det.stem_buffers[0],
                      det.stem_buffers[1], training);
  Tensor s0 = y, s1 = y;
  for (CellSlot& slot : det.cells) {
    Tensor p0 = preproc_forward(tape, slot.pre0, s0, training);
    Tensor p1 = preproc_forward(tape, slot.pre1, s1, training);
    Tensor out;
    if (slot.fixed) {
      out = discrete_cell_forward(tape, *slot.fixed, p0, p1, training);
    } else {
      ADD_CHECK_ARG(alpha != nullptr, "supernet forward needs architecture logits");
      const Tensor& table = slot.reduction ? alpha->reduce : alpha->normal;
      out = mixed_forward(tape, *slot.mixed, table, p0, p1, training);
    }
    s0 = s1;
    s1 = out;
  }

  DetectorOutput result;
  result.features = s1;
  Tensor attn = ops::conv2d(tape, s1, det.head.attn_w, {});
  result.feature_map_mask = ops::sigmoid(tape, attn);
  Tensor masked = ops::mul_channel(tape, s1, result.feature_map_mask);
  result.logits = classify_features(tape, det.head, masked);
  result.mask = ops::bilinear_upsample(tape, result.feature_map_mask, det.config.input_h,
                                       det.config.input_w);
  return result;
}

void collect_op(const OpInstance& op, const std::string& prefix,
                std::vector<std::pair<std::string, Tensor>>* params,
                std::vector<std::pair<std::string, Tensor>>* buffers) {
  if (params) {
    const std::vector<std::string> names = op_param_names(op.kind, op.stride, prefix);
    ADD_CHECK_ARG(names.size() == op.params.size(), "parameter naming out of sync for %s",
                  prefix.c_str());
    for (size_t i = 0; i < names.size(); ++i) params->push_back({names[i], op.params[i]});
  }
  if (buffers && !op.buffers.empty()) {
    buffers->push_back({prefix + ".running_mean", op.buffers[0]});
    buffers->push_back({prefix + ".running_var", op.buffers[1]});
  }
}

void collect_preproc(const Preproc& p, const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor>>* params,
                     std::vector<std::pair<std::string, Tensor>>* buffers) {
  if (params) {
    params->push_back({prefix + ".w", p.params[0]});
    params->push_back({prefix + ".gamma", p.params[1]});
    params->push_back({prefix + ".beta", p.params[2]});
  }
  if (buffers) {
    buffers->push_back({prefix + ".running_mean", p.buffers[0]});
    buffers->push_back({prefix + ".running_var", p.buffers[1]});
  }
}

// Walks every named tensor of the detector in checkpoint order.
void collect(const Detector& det, std::vector<std::pair<std::string, Tensor>>* params,
             std::vector<std::pair<std::string, Tensor>>* buffers) {
  if (params) {
    params->push_back({"stem.w", det.stem_params[0]});
    params->push_back({"stem.gamma", det.stem_params[1]});
    params->push_back({"stem.beta", det.stem_params[2]});
  }
  if (buffers) {
    buffers->push_back({"stem.running_mean", det.stem_buffers[0]});
    buffers->push_back({"stem.running_var", det.stem_buffers[1]});
  }
  for (size_t ci = 0; ci < det.cells.size(); ++ci) {
    const CellSlot& slot = det.cells[ci];
    const std::string cp = "cell" + std::to_string(ci);
    collect_preproc(slot.pre0, cp + ".pre0", params, buffers);
    collect_preproc(slot.pre1, cp + ".pre1", params, buffers);
    if (slot.fixed) {
      for (int i = 0; i < slot.fixed->blocks; ++i)
        for (int k = 0; k < 2; ++k)
          collect_op(slot.fixed->ops[static_cast<size_t>(i)][static_cast<size_t>(k)],
                     cp + ".b" + std::to_string(i) + ".e" + std::to_string(k), params, buffers);
    } else if (slot.mixed) {
      for (size_t e = 0; e < slot.mixed->edge_ops.size(); ++e)
        for (size_t k = 0; k < slot.mixed->edge_ops[e].size(); ++k)
          collect_op(slot.mixed->edge_ops[e][k],
                     cp + ".edge" + std::to_string(e) + "." +
                         std::string(op_kind_name(static_cast<OpKind>(k))),
                     params, buffers);
    }
  }
  if (params) {
    params->push_back({"head.attn.w", det.head.attn_w});
    params->push_back({"head.fc1.w", det.head.fc1_w});
    params->push_back({"head.fc1.b", det.head.fc1_b});
    params->push_back({"head.fc2.w", det.head.fc2_w});
    params->push_back({"head.fc2.b", det.head.fc2_b});
  }
}

}  // namespace

void validate_network_config(const NetworkConfig& c) {
  ADD_CHECK_CFG(c.stack_n >= 1, "stack_n must be >= 1, got %d", c.stack_n);
  ADD_CHECK_CFG(c.num_d2_blocks >= 1, "num_d2_blocks must be >= 1, got %d", c.num_d2_blocks);
  ADD_CHECK_CFG(c.stem_channels >= 1, "stem_channels must be >= 1, got %d", c.stem_channels);
  ADD_CHECK_CFG(c.num_classes == 2, "num_classes must be 2, got %d", c.num_classes);
  ADD_CHECK_CFG(c.lambda_mask >= 0, "lambda_mask must be >= 0, got %g",
                static_cast<double>(c.lambda_mask));
  const int f = total_reduction_factor(c);
  ADD_CHECK_CFG(c.input_h >= f && c.input_h % f == 0,
                "input height %d is not divisible by the reduction factor %d", c.input_h, f);
  ADD_CHECK_CFG(c.input_w >= f && c.input_w % f == 0,
                "input width %d is not divisible by the reduction factor %d", c.input_w, f);
}

std::string network_config_to_json(const NetworkConfig& c) {
  json j;
  j["stack_n"] = c.stack_n;
  j["num_d2_blocks"] = c.num_d2_blocks;
  j["stem_channels"] = c.stem_channels;
  j["input_h"] = c.input_h;
  j["input_w"] = c.input_w;
  j["num_classes"] = c.num_classes;
  j["lambda_mask"] = static_cast<double>(c.lambda_mask);
  return j.dump(2) + "\n";
}

NetworkConfig network_config_from_json(const std::string& text) {
  const json j = json::parse(text, nullptr, false);
  ADD_CHECK(j.is_object(), ErrorCode::Format, "network config must be a JSON object");
  NetworkConfig c;
  auto get_int = [&](const char* key, int fallback) {
    if (!j.contains(key)) return fallback;
    ADD_CHECK(j[key].is_number_integer(), ErrorCode::Format, "network config field %s must be an integer",
              key);
    return j[key].get<int>();
  };
  c.stack_n = get_int("stack_n", c.stack_n);
  c.num_d2_blocks = get_int("num_d2_blocks", c.num_d2_blocks);
  c.stem_channels = get_int("stem_channels", c.stem_channels);
  c.input_h = get_int("input_h", c.input_h);
  c.input_w = get_int("input_w", c.input_w);
  c.num_classes = get_int("num_classes", c.num_classes);
  if (j.contains("lambda_mask")) {
    ADD_CHECK(j["lambda_mask"].is_number(), ErrorCode::Format,
              "network config field lambda_mask must be a number");
    c.lambda_mask = static_cast<real>(j["lambda_mask"].get<double>());
  }
  validate_network_config(c);
  return c;
}

std::vector<std::pair<std::string, Tensor>> Detector::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  collect(*this, &out, nullptr);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Detector::named_buffers() const {
  std::vector<std::pair<std::string, Tensor>> out;
  collect(*this, nullptr, &out);
  return out;
}

std::vector<Tensor> Detector::params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

int64_t Detector::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : named_params()) n += t.numel();
  return n;
}

Detector assemble(const Genotype& genotype, const NetworkConfig& config, Rng& rng) {
  validate_genotype(genotype);
  return assemble_skeleton(genotype.blocks, config, rng,
                           [&](CellSlot& slot, int channels, bool reduction) {
                             slot.fixed = make_discrete_cell(genotype, reduction, channels, rng);
                           });
}

Detector assemble_supernet(int blocks, const NetworkConfig& config, Rng& rng) {
  ADD_CHECK_CFG(blocks >= 1, "blocks must be >= 1, got %d", blocks);
  return assemble_skeleton(blocks, config, rng,
                           [&](CellSlot& slot, int channels, bool reduction) {
                             slot.mixed = MixedCell::create(blocks, channels, reduction, rng);
                           });
}

DetectorOutput forward(Tape& tape, Detector& det, const Tensor& batch, bool training) {
  ADD_CHECK_ARG(!det.supernet(), "discrete forward called on a supernet");
  return run_forward(tape, det, nullptr, batch, training);
}

DetectorOutput forward_mixed(Tape& tape, Detector& det, const ArchParams& alpha,
                             const Tensor& batch, bool training) {
  ADD_CHECK_ARG(det.supernet(), "mixed forward called on a discrete detector");
  ADD_CHECK_ARG(alpha.blocks == det.blocks, "architecture logits are for %d blocks, cell has %d",
                alpha.blocks, det.blocks);
  return run_forward(tape, det, &alpha, batch, training);
}

Tensor classify_features(Tape& tape, const Head& head, const Tensor& feature_map) {
  Tensor pooled = ops::global_avg_pool(tape, feature_map);
  Tensor h = ops::linear(tape, pooled, head.fc1_w, head.fc1_b);
  h = ops::relu(tape, h);
  return ops::linear(tape, h, head.fc2_w, head.fc2_b);
}

Tensor loss_ce_masked(Tape& tape, const DetectorOutput& out, const std::vector<int>& labels) {
  for (int v : labels)
    ADD_CHECK_ARG(v == 0 || v == 1, "labels must be 0 or 1, got %d", v);
  return ops::cross_entropy(tape, out.logits, labels);
}

Tensor loss_mask(Tape& tape, const DetectorOutput& out, const Tensor& mask_gt) {
  ADD_CHECK_ARG(out.mask.shape() == mask_gt.shape(), "mask target shape mismatch");
  return ops::mse(tape, out.mask, mask_gt);
}

Tensor loss_overall(Tape& tape, const DetectorOutput& out, const std::vector<int>& labels,
                    const Tensor& mask_gt, real lambda_mask) {
  ADD_CHECK_CFG(lambda_mask >= 0, "lambda_mask must be >= 0, got %g",
                static_cast<double>(lambda_mask));
  Tensor ce = loss_ce_masked(tape, out, labels);
  Tensor m = loss_mask(tape, out, mask_gt);
  return ops::lincomb(tape, 1, ce, lambda_mask, m);
}

}  // namespace add
