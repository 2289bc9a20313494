#include "train/experiment.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "core/common.hpp"
#include "core/tape.hpp"
#include "net/checkpoint.hpp"
#include "net/network.hpp"
#include "train/loop.hpp"

namespace add {

namespace {

using nlohmann::json;

double number_field(const json& j, const char* section, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  ADD_CHECK(j[key].is_number(), ErrorCode::Format, "%s \"%s\" must be a number", section, key);
  return j[key].get<double>();
}

int64_t integer_field(const json& j, const char* section, const char* key, int64_t fallback) {
  if (!j.contains(key)) return fallback;
  ADD_CHECK(j[key].is_number_integer(), ErrorCode::Format, "%s \"%s\" must be an integer", section,
            key);
  return j[key].get<int64_t>();
}

OptimizerConfig optimizer_from_fields(const json& j, const char* section, OptimizerConfig cfg) {
  ADD_CHECK(j.is_object(), ErrorCode::Format, "%s must be a JSON object", section);
  if (j.contains("kind")) {
    ADD_CHECK(j["kind"].is_string(), ErrorCode::Format, "%s \"kind\" must be a string", section);
    cfg.kind = optimizer_kind_from_name(j["kind"].get<std::string>());
  }
  cfg.lr = number_field(j, section, "lr", cfg.lr);
  cfg.momentum = number_field(j, section, "momentum", cfg.momentum);
  cfg.beta2 = number_field(j, section, "beta2", cfg.beta2);
  cfg.eps = number_field(j, section, "eps", cfg.eps);
  cfg.weight_decay = number_field(j, section, "weight_decay", cfg.weight_decay);
  return cfg;
}

// Only the shape of the schedule is configurable; base_lr and total_epochs
// follow the phase's optimizer and epoch count.
ScheduleSpec schedule_from_fields(const json& j, const char* section, ScheduleSpec spec) {
  ADD_CHECK(j.is_object(), ErrorCode::Format, "%s must be a JSON object", section);
  if (j.contains("kind")) {
    ADD_CHECK(j["kind"].is_string(), ErrorCode::Format, "%s \"kind\" must be a string", section);
    spec.kind = schedule_kind_from_name(j["kind"].get<std::string>());
  }
  if (j.contains("milestones")) {
    ADD_CHECK(j["milestones"].is_array(), ErrorCode::Format, "%s \"milestones\" must be an array",
              section);
    spec.milestones.clear();
    for (const json& m : j["milestones"]) {
      ADD_CHECK(m.is_number_integer(), ErrorCode::Format, "%s milestones must be integers",
                section);
      spec.milestones.push_back(m.get<int>());
    }
  }
  spec.factor = number_field(j, section, "factor", spec.factor);
  return spec;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  ADD_CHECK(in.good(), ErrorCode::Io, "cannot read %s", path.c_str());
  std::ostringstream buf;
  buf << in.rdbuf();
  ADD_CHECK(!in.bad(), ErrorCode::Io, "cannot read %s", path.c_str());
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  ADD_CHECK(out.good(), ErrorCode::Io, "cannot write %s", path.c_str());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  ADD_CHECK(out.good(), ErrorCode::Io, "cannot write %s", path.c_str());
}

std::filesystem::path prepare_out_dir(const std::string& out_dir) {
  ADD_CHECK(!out_dir.empty(), ErrorCode::InvalidArgument, "output directory path is empty");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  ADD_CHECK(!ec, ErrorCode::Io, "cannot create output directory %s: %s", out_dir.c_str(),
            ec.message().c_str());
  return std::filesystem::path(out_dir);
}

// Materializes the samples a source describes at the network's input size.
// Synthetic recipes must already match it: silently resampling generated
// images would change the task, so a mismatch is a config error.
std::vector<Sample> load_source(const DataSource& source, const NetworkConfig& net) {
  if (source.synthetic) {
    ADD_CHECK_CFG(source.spec.h == net.input_h && source.spec.w == net.input_w,
                  "synthetic data is %dx%d but the network expects %dx%d", source.spec.h,
                  source.spec.w, net.input_h, net.input_w);
    return generate(source.spec);
  }
  return ingest(source.dir, net.input_h, net.input_w);
}

MetricsReport report_from_eval(const EvalResult& ev) {
  return evaluate_scores(ev.scores, ev.labels);
}

MetricRow row_from_eval(int epoch, const char* split, const EvalResult& ev) {
  const MetricsReport rep = report_from_eval(ev);
  return {epoch, split, ev.loss_ce, ev.loss_mse, rep.acc, rep.auc};
}

}  // namespace

ExperimentConfig experiment_config_from_json(const std::string& text) {
  const json j = json::parse(text, nullptr, false);
  ADD_CHECK(!j.is_discarded(), ErrorCode::Format, "experiment config is not valid JSON");
  ADD_CHECK(j.is_object(), ErrorCode::Format, "experiment config must be a JSON object");

  ExperimentConfig cfg;
  cfg.seed = static_cast<uint64_t>(
      integer_field(j, "config", "seed", static_cast<int64_t>(cfg.seed)));
  if (j.contains("data")) cfg.data = data_source_from_json(j["data"].dump());
  if (j.contains("split")) {
    const json& s = j["split"];
    ADD_CHECK(s.is_object(), ErrorCode::Format, "config \"split\" must be a JSON object");
    cfg.train_frac = number_field(s, "split", "train", cfg.train_frac);
    cfg.val_frac = number_field(s, "split", "val", cfg.val_frac);
    cfg.test_frac = number_field(s, "split", "test", cfg.test_frac);
  }
  if (j.contains("network")) cfg.network = network_config_from_json(j["network"].dump());
  if (j.contains("search")) {
    const json& s = j["search"];
    ADD_CHECK(s.is_object(), ErrorCode::Format, "config \"search\" must be a JSON object");
    cfg.search.blocks = static_cast<int>(integer_field(s, "search", "blocks", cfg.search.blocks));
    cfg.search.epochs = static_cast<int>(integer_field(s, "search", "epochs", cfg.search.epochs));
    cfg.search.batch_size =
        static_cast<int>(integer_field(s, "search", "batch_size", cfg.search.batch_size));
    if (s.contains("w_opt")) cfg.search.w_opt = optimizer_from_fields(s["w_opt"], "w_opt", cfg.search.w_opt);
    if (s.contains("w_schedule"))
      cfg.search.w_schedule = schedule_from_fields(s["w_schedule"], "w_schedule", cfg.search.w_schedule);
    if (s.contains("alpha_opt"))
      cfg.search.alpha_opt = optimizer_from_fields(s["alpha_opt"], "alpha_opt", cfg.search.alpha_opt);
  }
  if (j.contains("retrain")) {
    const json& r = j["retrain"];
    ADD_CHECK(r.is_object(), ErrorCode::Format, "config \"retrain\" must be a JSON object");
    cfg.retrain.epochs = static_cast<int>(integer_field(r, "retrain", "epochs", cfg.retrain.epochs));
    cfg.retrain.batch_size =
        static_cast<int>(integer_field(r, "retrain", "batch_size", cfg.retrain.batch_size));
    if (r.contains("opt")) cfg.retrain.opt = optimizer_from_fields(r["opt"], "opt", cfg.retrain.opt);
    if (r.contains("schedule"))
      cfg.retrain.schedule = schedule_from_fields(r["schedule"], "schedule", cfg.retrain.schedule);
  }
  cfg.search.network = cfg.network;
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  ExperimentConfig cfg = experiment_config_from_json(read_text_file(path));
  if (const char* env = std::getenv("ADD_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    ADD_CHECK_CFG(end != env && *end == '\0' && env[0] != '-',
                  "ADD_SEED must be a non-negative integer, got \"%s\"", env);
    cfg.seed = static_cast<uint64_t>(v);
  }
  return cfg;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "epoch,split,loss_ce,loss_mse,acc,auc\n";
  for (const MetricRow& r : rows)
    out += strformat("%d,%s,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.split.c_str(), r.loss_ce,
                     r.loss_mse, r.acc, r.auc);
  return out;
}

Genotype run_search_phase(const ExperimentConfig& config, const std::string& out_dir) {
  const std::filesystem::path out = prepare_out_dir(out_dir);
  const std::vector<Sample> samples = load_source(config.data, config.network);
  const SplitResult sp =
      split(samples, config.train_frac, config.val_frac, config.test_frac, config.seed);
  Rng rng(config.seed);
  const SearchResult result = search(sp.train, sp.val, config.search, rng);

  std::vector<MetricRow> rows;
  for (const EpochStats& s : result.history) {
    rows.push_back({s.epoch, "train", s.train_ce, s.train_mse, s.train_acc, s.train_auc});
    rows.push_back({s.epoch, "val", s.val_ce, s.val_mse, s.val_acc, s.val_auc});
  }
  write_text_file((out / "metrics.csv").string(), metrics_csv(rows));
  write_text_file((out / "genotype.json").string(), genotype_to_json(result.genotype));
  write_text_file((out / "cell.dot").string(), genotype_to_dot(result.genotype));
  return result.genotype;
}

MetricsReport run_retrain_phase(const ExperimentConfig& config, const std::string& genotype_path,
                                const std::string& out_dir) {
  const Genotype genotype = genotype_from_json(read_text_file(genotype_path));
  const RetrainConfig& rt = config.retrain;
  ADD_CHECK_CFG(rt.epochs >= 1, "retraining needs at least 1 epoch, got %d", rt.epochs);
  ADD_CHECK_CFG(rt.batch_size >= 1, "batch size must be positive, got %d", rt.batch_size);
  validate_network_config(config.network);

  const std::filesystem::path out = prepare_out_dir(out_dir);
  const std::vector<Sample> samples = load_source(config.data, config.network);
  const SplitResult sp =
      split(samples, config.train_frac, config.val_frac, config.test_frac, config.seed);
  const Prepared train = prepare(sp.train);
  const Prepared val = prepare(sp.val);
  const Prepared test = prepare(sp.test);
  ADD_CHECK_CFG(!train.samples.empty(), "the training split is empty");
  ADD_CHECK_CFG(!val.samples.empty(), "the validation split is empty");
  ADD_CHECK_CFG(!test.samples.empty(), "the test split is empty");

  Rng rng(config.seed);
  Detector det = assemble(genotype, config.network, rng);
  Optimizer opt(rt.opt, det.params());
  ScheduleSpec schedule = rt.schedule;
  schedule.base_lr = rt.opt.lr;
  schedule.total_epochs = rt.epochs;
  const double lambda = config.network.lambda_mask;

  std::vector<MetricRow> rows;
  for (int epoch = 0; epoch < rt.epochs; ++epoch) {
    // Zero freezes the weights; the schedule only scales a live rate.
    if (rt.opt.lr != 0.0) opt.set_lr(lr_at(schedule, epoch));
    double ce_sum = 0.0, mse_sum = 0.0;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const std::vector<size_t>& bidx :
         epoch_batches(train.samples.size(), rt.batch_size, rng)) {
      const Batch b = gather(train, bidx);
      for (Tensor& p : det.params()) p.zero_grad();
      Tape tape;
      DetectorOutput dout = forward(tape, det, b.images, true);
      Tensor ce = loss_ce_masked(tape, dout, b.labels);
      Tensor mse = loss_mask(tape, dout, b.masks);
      Tensor loss = ops::lincomb(tape, 1.0f, ce, static_cast<real>(lambda), mse);
      const double lv = loss.item();
      ADD_CHECK(std::isfinite(lv), ErrorCode::Numeric,
                "non-finite training loss %g at step %lld (epoch %d)", lv,
                static_cast<long long>(opt.steps() + 1), epoch);
      tape.backward(loss);
      opt.step();
      const double n = static_cast<double>(bidx.size());
      ce_sum += ce.item() * n;
      mse_sum += mse.item() * n;
      const std::vector<double> s = fake_scores(dout.logits);
      scores.insert(scores.end(), s.begin(), s.end());
      labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    }
    const double seen = static_cast<double>(scores.size());
    rows.push_back({epoch, "train", ce_sum / seen, mse_sum / seen, accuracy(scores, labels),
                    auc_or_nan(scores, labels)});
    rows.push_back(row_from_eval(epoch, "val", evaluate_set(det, nullptr, val, rt.batch_size)));
  }
  const EvalResult test_ev = evaluate_set(det, nullptr, test, rt.batch_size);
  rows.push_back(row_from_eval(rt.epochs - 1, "test", test_ev));
  write_text_file((out / "metrics.csv").string(), metrics_csv(rows));

  json embedded;
  embedded["network"] = json::parse(network_config_to_json(config.network));
  embedded["genotype"] = json::parse(genotype_to_json(genotype));
  std::vector<std::pair<std::string, Tensor>> blobs = det.named_params();
  for (auto& nb : det.named_buffers()) blobs.push_back(nb);
  save_checkpoint((out / "checkpoint.addc").string(), embedded.dump(2), blobs);
  return report_from_eval(test_ev);
}

MetricsReport run_eval_phase(const std::string& checkpoint_path, const DataSource& source,
                             const std::string& out_dir) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const json j = json::parse(ckpt.config_json, nullptr, false);
  ADD_CHECK(!j.is_discarded() && j.is_object() && j.contains("network") && j.contains("genotype"),
            ErrorCode::Format, "checkpoint %s does not embed a network config and genotype",
            checkpoint_path.c_str());
  const NetworkConfig net = network_config_from_json(j["network"].dump());
  const Genotype genotype = genotype_from_json(j["genotype"].dump());

  const std::filesystem::path out = prepare_out_dir(out_dir);
  Rng rng(0);  // initialization is overwritten by the checkpoint
  Detector det = assemble(genotype, net, rng);
  std::vector<std::pair<std::string, Tensor>> dst = det.named_params();
  for (auto& nb : det.named_buffers()) dst.push_back(nb);
  load_tensors(ckpt, dst);

  const Prepared prepared = prepare(load_source(source, net));
  ADD_CHECK_CFG(!prepared.samples.empty(), "the evaluation set is empty");
  const EvalResult ev = evaluate_set(det, nullptr, prepared, 32);
  write_text_file((out / "metrics.csv").string(), metrics_csv({row_from_eval(0, "eval", ev)}));
  return report_from_eval(ev);
}

}  // namespace add
