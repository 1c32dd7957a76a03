#include "core/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "core/adam.hpp"
#include "core/conv.hpp"

namespace ckconv {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

int64_t task_channel_count(const std::string& task, bool one_hot) {
  if (task == "adding") return 2;
  return one_hot ? 10 : 1;
}

SequenceBatch gen_named_task(const std::string& task, int64_t seq_len, bool one_hot, int64_t count,
                             Rng& rng) {
  if (task == "adding") return gen_adding_problem(seq_len, count, rng);
  if (task == "copy") return gen_copy_memory(seq_len, count, rng, one_hot);
  fail(ErrorKind::config, "unknown task '" + task + "' (expected adding or copy)");
}

// Steps flagged on the marker channel of an adding batch; those two carry the
// whole answer, so the keep_markers protocol never drops them.
std::vector<std::vector<int64_t>> marker_keep_lists(const SequenceBatch& b) {
  const int64_t B = b.batch(), C = b.channels(), T = b.length();
  std::vector<std::vector<int64_t>> keep(static_cast<size_t>(B));
  const double* v = b.values.ptr();
  for (int64_t bi = 0; bi < B; ++bi)
    for (int64_t t = 0; t < T; ++t)
      if (v[(bi * C + 1) * T + t] != 0.0) keep[static_cast<size_t>(bi)].push_back(t);
  return keep;
}

SequenceBatch apply_drop(const std::string& task, bool keep_markers, const SequenceBatch& b,
                         double p, Rng& rng) {
  std::vector<std::vector<int64_t>> keep;
  if (task == "adding" && keep_markers) keep = marker_keep_lists(b);
  return random_drop(b, p, rng, keep);
}

SequenceBatch select_rows(const SequenceBatch& d, const int64_t* idx, int64_t count) {
  const int64_t C = d.channels(), T = d.length();
  SequenceBatch out;
  out.values = Tensor::zeros({count, C, T});
  for (int64_t i = 0; i < count; ++i)
    std::copy(d.values.ptr() + idx[i] * C * T, d.values.ptr() + (idx[i] + 1) * C * T,
              out.values.ptr() + i * C * T);
  if (d.mask.numel() > 0) {
    out.mask = Tensor::zeros({count, 1, T});
    for (int64_t i = 0; i < count; ++i)
      std::copy(d.mask.ptr() + idx[i] * T, d.mask.ptr() + (idx[i] + 1) * T, out.mask.ptr() + i * T);
  }
  if (d.targets.numel() > 0) {
    out.targets = Tensor::zeros({count, 1});
    for (int64_t i = 0; i < count; ++i) out.targets.ptr()[i] = d.targets.ptr()[idx[i]];
  }
  if (!d.classes.empty()) {
    out.classes.resize(static_cast<size_t>(count * T));
    for (int64_t i = 0; i < count; ++i)
      std::copy(d.classes.begin() + idx[i] * T, d.classes.begin() + (idx[i] + 1) * T,
                out.classes.begin() + i * T);
  }
  out.positions = d.positions;
  out.full_length = d.full_length;
  return out;
}

// Model input for a batch. Fully observed data passes through unchanged; a
// masked batch becomes density-weighted values plus the raw mask as an extra
// channel (a fully observed batch fed to a mask-channel model gets weight 1
// and an all-ones mask, which is the same pipeline with nothing missing).
Tensor assemble_input(const SequenceBatch& b, int64_t expected_channels) {
  const int64_t B = b.batch(), C = b.channels(), T = b.length();
  const bool masked = b.mask.numel() > 0;
  if (!masked && C == expected_channels) return b.values;
  if (C + 1 != expected_channels) {
    fail(ErrorKind::config, "model expects " + std::to_string(expected_channels) +
                                " input channels but the data provides " + std::to_string(C) +
                                (masked ? " plus a mask; dropped-step data needs a model trained "
                                          "with drop_prob > 0"
                                        : ""));
  }
  Tensor in = Tensor::zeros({B, C + 1, T});
  double* o = in.ptr();
  const double* v = b.values.ptr();
  if (!masked) {
    for (int64_t bi = 0; bi < B; ++bi) {
      std::copy(v + bi * C * T, v + (bi + 1) * C * T, o + bi * (C + 1) * T);
      std::fill(o + (bi * (C + 1) + C) * T, o + (bi * (C + 1) + C + 1) * T, 1.0);
    }
    return in;
  }
  Tensor dens = drop_density(b.mask);
  const double* w = dens.ptr();
  const double* m = b.mask.ptr();
  for (int64_t bi = 0; bi < B; ++bi) {
    for (int64_t c = 0; c < C; ++c)
      for (int64_t t = 0; t < T; ++t)
        o[(bi * (C + 1) + c) * T + t] = v[(bi * C + c) * T + t] * w[bi * T + t];
    std::copy(m + bi * T, m + (bi + 1) * T, o + (bi * (C + 1) + C) * T);
  }
  return in;
}

Tensor task_loss(const std::string& task, const Tensor& out, const SequenceBatch& b, Tape* tape) {
  if (task == "adding") {
    if (b.targets.numel() == 0) fail(ErrorKind::data, "adding batch carries no scalar targets");
    return mse_loss(out, b.targets, tape);
  }
  if (b.classes.empty()) fail(ErrorKind::data, "copy batch carries no per-step classes");
  return cross_entropy_loss(out, b.classes, tape);
}

// Fraction of correctly classified steps among the last `tail` of each row.
double tail_accuracy(const Tensor& logits, const std::vector<int64_t>& classes, int64_t tail) {
  const int64_t B = logits.dim(0), C = logits.dim(1), T = logits.dim(2);
  tail = std::min(tail, T);
  const double* p = logits.ptr();
  int64_t correct = 0, total = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = T - tail; t < T; ++t) {
      int64_t arg = 0;
      double best = p[(b * C) * T + t];
      for (int64_t c = 1; c < C; ++c)
        if (p[(b * C + c) * T + t] > best) {
          best = p[(b * C + c) * T + t];
          arg = c;
        }
      if (arg == classes[static_cast<size_t>(b * T + t)]) ++correct;
      ++total;
    }
  return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

struct EvalOut {
  double loss = 0.0;
  double metric = 0.0;  // mse again for adding, last-10 accuracy for copy
};

EvalOut eval_model(const CkcnnModel& model, const std::string& task, const SequenceBatch& data,
                   const Resample& rs) {
  const int64_t N = data.batch();
  if (N == 0) fail(ErrorKind::data, "evaluation set is empty");
  const int64_t chunk = 256;
  double loss_sum = 0.0, metric_sum = 0.0;
  for (int64_t s = 0; s < N; s += chunk) {
    const int64_t n = std::min<int64_t>(chunk, N - s);
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), s);
    SequenceBatch mb = select_rows(data, idx.data(), n);
    Tensor in = assemble_input(mb, model.config().in_channels);
    Tensor out = model.forward(in, rs, false);
    const double lv = task_loss(task, out, mb, nullptr).scalar();
    const double mv = task == "adding" ? lv : tail_accuracy(out, mb.classes, 10);
    loss_sum += lv * static_cast<double>(n);
    metric_sum += mv * static_cast<double>(n);
  }
  return {loss_sum / static_cast<double>(N), metric_sum / static_cast<double>(N)};
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::data, "cannot parse '" + path + "': " + e.what());
  }
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) fail(ErrorKind::data, "cannot write '" + tmp + "'");
    out << j.dump() << "\n";
    if (!out) fail(ErrorKind::data, "short write to '" + tmp + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::data, "cannot move '" + tmp + "' into place: " + ec.message());
}

std::string prepare_out_dir(const json& options) {
  std::string out_dir = ".";
  try {
    out_dir = options.value("out_dir", out_dir);
  } catch (const json::exception&) {
    fail(ErrorKind::config, "out_dir must be a string");
  }
  if (out_dir.empty()) out_dir = ".";
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    fail(ErrorKind::data, "cannot create output directory '" + out_dir + "': " + ec.message());
  return out_dir;
}

std::string join_path(const std::string& dir, const std::string& name) {
  if (!name.empty() && fs::path(name).is_absolute()) return name;
  return (fs::path(dir) / name).string();
}

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

json optimizer_to_json(const AdamState& st, const std::vector<NamedParam>& params) {
  json m = json::object(), v = json::object();
  for (size_t i = 0; i < params.size(); ++i) {
    if (i < st.m.size()) m[params[i].name] = st.m[i];
    if (i < st.v.size()) v[params[i].name] = st.v[i];
  }
  return json{{"t", st.t}, {"m", std::move(m)}, {"v", std::move(v)}};
}

void shuffle_indices(std::vector<int64_t>& idx, Rng& rng) {
  for (int64_t i = static_cast<int64_t>(idx.size()) - 1; i > 0; --i) {
    const int64_t j = rng.uniform_int(0, i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
}

// Decoupled from the loss so layer-norm affine parameters stay unregularized.
void apply_weight_decay(std::vector<NamedParam>& params, double wd) {
  for (NamedParam& p : params) {
    if (p.name.find(".norm") != std::string::npos) continue;
    p.tensor.ensure_grad();
    double* g = p.tensor.gptr();
    const double* v = p.tensor.ptr();
    for (int64_t i = 0; i < p.tensor.numel(); ++i) g[i] += wd * v[i];
  }
}

Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor t = Tensor::zeros(shape);
  double* p = t.ptr();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = rng.uniform(lo, hi);
  return t;
}

double rel_l2(const std::vector<double>& got, const std::vector<double>& want) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    const double d = got[i] - want[i];
    num += d * d;
    den += want[i] * want[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

const CkconvLayer& find_layer(CkcnnModel& model, const std::string& spec) {
  int64_t bi = -1;
  int ci = 0;
  const size_t dot = spec.find('.');
  if (dot != std::string::npos && spec.rfind("block", 0) == 0) {
    try {
      bi = std::stoll(spec.substr(5, dot - 5));
      const std::string c = spec.substr(dot + 1);
      ci = c == "conv1" ? 1 : c == "conv2" ? 2 : 0;
    } catch (const std::exception&) {
      ci = 0;
    }
  }
  if (ci == 0 || bi < 0 || bi >= static_cast<int64_t>(model.blocks().size()))
    fail(ErrorKind::config, "unknown kernel layer '" + spec + "' (expected block<i>.conv<1|2>)");
  const CkcnnBlock& blk = model.blocks()[static_cast<size_t>(bi)];
  return ci == 1 ? blk.conv1 : blk.conv2;
}

void write_kernel_csv(const std::string& path, const Tensor& kern, const std::vector<double>& pos) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::data, "cannot write '" + path + "'");
  out << "position,out_channel,in_channel,value\n";
  const int64_t O = kern.dim(0), I = kern.dim(1), K = kern.dim(2);
  const double* k = kern.ptr();
  for (int64_t o = 0; o < O; ++o)
    for (int64_t i = 0; i < I; ++i)
      for (int64_t t = 0; t < K; ++t)
        out << g17(pos[static_cast<size_t>(t)]) << ',' << o << ',' << i << ','
            << g17(k[(o * I + i) * K + t]) << "\n";
  if (!out) fail(ErrorKind::data, "short write to '" + path + "'");
}

}  // namespace

double PlateauScheduler::step(double value) {
  if (!has_best) {
    best = value;
    has_best = true;
    bad = 0;
    return lr;
  }
  if (value < best - min_delta) {
    best = value;
    bad = 0;
    return lr;
  }
  if (++bad >= patience) {
    lr /= decay;
    bad = 0;
  }
  return lr;
}

json TrainConfig::to_json() const {
  return json{{"task",
               {{"name", task},
                {"seq_len", seq_len},
                {"one_hot", one_hot},
                {"dataset_size", dataset_size},
                {"val_fraction", val_fraction},
                {"regenerate_each_epoch", regenerate_each_epoch}}},
              {"model", model.to_json()},
              {"train",
               {{"epochs", epochs},
                {"batch_size", batch_size},
                {"lr", lr},
                {"weight_decay", weight_decay},
                {"patience", patience},
                {"lr_decay", lr_decay},
                {"min_delta", min_delta},
                {"seed", seed}}},
              {"resample", {{"drop_prob", drop_prob}, {"keep_markers", keep_markers}}}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) fail(ErrorKind::config, "train options must be a JSON object");
  TrainConfig c;
  try {
    if (j.contains("task")) {
      const json& t = j.at("task");
      c.task = t.value("name", c.task);
      c.seq_len = t.value("seq_len", c.seq_len);
      c.one_hot = t.value("one_hot", c.one_hot);
      c.dataset_size = t.value("dataset_size", c.dataset_size);
      c.val_fraction = t.value("val_fraction", c.val_fraction);
      c.regenerate_each_epoch = t.value("regenerate_each_epoch", c.regenerate_each_epoch);
    }
    if (j.contains("model")) c.model = CkcnnConfig::from_json(j.at("model"));
    if (j.contains("train")) {
      const json& t = j.at("train");
      c.epochs = t.value("epochs", c.epochs);
      c.batch_size = t.value("batch_size", c.batch_size);
      c.lr = t.value("lr", c.lr);
      c.weight_decay = t.value("weight_decay", c.weight_decay);
      c.patience = t.value("patience", c.patience);
      c.lr_decay = t.value("lr_decay", c.lr_decay);
      c.min_delta = t.value("min_delta", c.min_delta);
      c.seed = t.value("seed", c.seed);
    }
    if (j.contains("resample")) {
      const json& r = j.at("resample");
      c.drop_prob = r.value("drop_prob", c.drop_prob);
      c.keep_markers = r.value("keep_markers", c.keep_markers);
      if (r.value("stride", int64_t{1}) != 1 || r.value("sr_ratio", int64_t{1}) != 1)
        fail(ErrorKind::config,
             "training always runs on the native grid; stride / sr_ratio belong to evaluate "
             "and resample-test");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("bad train options: ") + e.what());
  }

  if (c.task != "adding" && c.task != "copy")
    fail(ErrorKind::config, "unknown task '" + c.task + "' (expected adding or copy)");
  if (c.seq_len < 2) fail(ErrorKind::config, "seq_len must be >= 2");
  if (c.dataset_size < 1) fail(ErrorKind::config, "dataset_size must be >= 1");
  if (!(c.val_fraction > 0.0) || c.val_fraction > 0.5)
    fail(ErrorKind::config, "val_fraction must lie in (0, 0.5]");
  if (c.epochs < 1) fail(ErrorKind::config, "epochs must be >= 1");
  if (c.batch_size < 1) fail(ErrorKind::config, "batch_size must be >= 1");
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) fail(ErrorKind::config, "lr must be positive and finite");
  if (c.weight_decay < 0.0) fail(ErrorKind::config, "weight_decay must be >= 0");
  if (c.patience < 1) fail(ErrorKind::config, "patience must be >= 1");
  if (c.lr_decay < 1.0) fail(ErrorKind::config, "lr_decay must be >= 1");
  if (c.min_delta < 0.0) fail(ErrorKind::config, "min_delta must be >= 0");
  if (!(c.drop_prob >= 0.0) || c.drop_prob >= 1.0)
    fail(ErrorKind::config, "drop_prob must lie in [0, 1)");

  // the task decides the model's interface; a drop protocol adds the mask channel
  c.model.in_channels =
      static_cast<int>(task_channel_count(c.task, c.one_hot) + (c.drop_prob > 0.0 ? 1 : 0));
  if (c.task == "adding") {
    c.model.out_dim = 1;
    c.model.head = HeadKind::seq_label;
    c.model.train_max_len = c.seq_len;
  } else {
    c.model.out_dim = 9;
    c.model.head = HeadKind::seq_seq;
    c.model.train_max_len = c.seq_len + 20;
  }
  return c;
}

json train(const json& options) {
  TrainConfig cfg = TrainConfig::from_json(options);
  const std::string out_dir = prepare_out_dir(options);
  const std::string metrics_path = join_path(out_dir, "metrics.jsonl");
  const std::string checkpoint_path = join_path(out_dir, "checkpoint.json");

  Rng root(cfg.seed);
  Rng init_rng = root.fork(1);
  Rng val_data_rng = root.fork(2);
  Rng val_drop_rng = root.fork(3);
  Rng data_rng = root.fork(4);
  Rng drop_rng = root.fork(5);
  Rng shuffle_rng = root.fork(6);
  Rng dropout_rng = root.fork(7);

  CkcnnModel model(cfg.model);
  model.init(init_rng);
  std::vector<NamedParam> params = model.params();

  const int64_t val_count =
      std::max<int64_t>(1, std::llround(static_cast<double>(cfg.dataset_size) * cfg.val_fraction));
  SequenceBatch val = gen_named_task(cfg.task, cfg.seq_len, cfg.one_hot, val_count, val_data_rng);
  if (cfg.drop_prob > 0.0)
    val = apply_drop(cfg.task, cfg.keep_markers, val, cfg.drop_prob, val_drop_rng);

  std::ofstream metrics(metrics_path);
  if (!metrics) fail(ErrorKind::data, "cannot write '" + metrics_path + "'");
  metrics << json{{"config", cfg.to_json()},
                  {"param_count", model.param_count()},
                  {"warnings", model.warnings()}}
                 .dump()
          << "\n"
          << std::flush;

  AdamState opt;
  PlateauScheduler sched{
      .lr = cfg.lr, .patience = cfg.patience, .decay = cfg.lr_decay, .min_delta = cfg.min_delta};
  double lr_now = cfg.lr;

  double best_val = std::numeric_limits<double>::infinity();
  double best_metric = 0.0;
  int64_t best_epoch = -1;
  int64_t epochs_run = 0;
  bool stopped_early = false;
  std::string stop_reason = "max_epochs";

  SequenceBatch trainset;
  const auto t0 = std::chrono::steady_clock::now();

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.regenerate_each_epoch || trainset.batch() == 0) {
      trainset = gen_named_task(cfg.task, cfg.seq_len, cfg.one_hot, cfg.dataset_size, data_rng);
      if (cfg.drop_prob > 0.0)
        trainset = apply_drop(cfg.task, cfg.keep_markers, trainset, cfg.drop_prob, drop_rng);
    }

    std::vector<int64_t> order(static_cast<size_t>(trainset.batch()));
    std::iota(order.begin(), order.end(), int64_t{0});
    shuffle_indices(order, shuffle_rng);

    double loss_sum = 0.0;
    int64_t seen = 0;
    for (int64_t start = 0; start < trainset.batch(); start += cfg.batch_size) {
      const int64_t n = std::min<int64_t>(cfg.batch_size, trainset.batch() - start);
      SequenceBatch mb = select_rows(trainset, order.data() + start, n);
      Tensor in = assemble_input(mb, cfg.model.in_channels);

      Tape tape;
      Tensor out = model.forward(in, Resample{}, true, &tape, &dropout_rng);
      Tensor loss = task_loss(cfg.task, out, mb, &tape);
      const double lv = loss.scalar();
      if (!std::isfinite(lv))
        fail(ErrorKind::divergence,
             "training loss became non-finite at epoch " + std::to_string(epoch));

      for (NamedParam& p : params) p.tensor.zero_grad();
      tape.backward(loss);
      if (cfg.weight_decay > 0.0) apply_weight_decay(params, cfg.weight_decay);
      adam_step(params, opt, lr_now);
      model.note_params_updated();
      for (const NamedParam& p : params)
        if (!all_finite(p.tensor))
          fail(ErrorKind::divergence,
               "parameter '" + p.name + "' became non-finite at epoch " + std::to_string(epoch));

      loss_sum += lv * static_cast<double>(n);
      seen += n;
    }

    const EvalOut ve = eval_model(model, cfg.task, val, Resample{});
    if (!std::isfinite(ve.loss))
      fail(ErrorKind::divergence,
           "validation loss became non-finite at epoch " + std::to_string(epoch));
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics << json{{"epoch", epoch},
                    {"train_loss", loss_sum / static_cast<double>(seen)},
                    {"val_loss", ve.loss},
                    {"val_metric", ve.metric},
                    {"lr", lr_now},
                    {"wall_time", wall}}
                   .dump()
            << "\n"
            << std::flush;
    epochs_run = epoch + 1;

    if (ve.loss < best_val) {
      best_val = ve.loss;
      best_metric = ve.metric;
      best_epoch = epoch;
      write_json_file(checkpoint_path, json{{"format", "ckconv-checkpoint"},
                                            {"epoch", epoch},
                                            {"val_loss", ve.loss},
                                            {"val_metric", ve.metric},
                                            {"model", model.to_json()},
                                            {"optimizer", optimizer_to_json(opt, params)},
                                            {"train_config", cfg.to_json()}});
    }

    if (cfg.task == "adding" && ve.loss <= 1e-4) {
      stopped_early = true;
      stop_reason = "val_loss_target";
      break;
    }
    if (cfg.task == "copy" && ve.metric >= 1.0) {
      stopped_early = true;
      stop_reason = "val_metric_target";
      break;
    }
    lr_now = sched.step(ve.loss);
  }

  return json{{"best_val_loss", best_val},
              {"best_val_metric", best_metric},
              {"best_epoch", best_epoch},
              {"epochs_run", epochs_run},
              {"stopped_early", stopped_early},
              {"stop_reason", stop_reason},
              {"param_count", model.param_count()},
              {"warnings", model.warnings()},
              {"checkpoint", checkpoint_path},
              {"metrics", metrics_path}};
}

json evaluate(const json& options) {
  if (!options.is_object()) fail(ErrorKind::config, "evaluate options must be a JSON object");
  if (!options.contains("checkpoint"))
    fail(ErrorKind::config, "evaluate needs a \"checkpoint\" path");

  std::string cp_path;
  std::string data_csv;
  std::string task = "adding";
  int64_t seq_len = 100;
  bool one_hot = false;
  int64_t size = 500;
  uint64_t seed = 1234;
  int64_t stride = 1, sr_ratio = 1;
  double drop_prob = 0.0;
  bool keep_markers = true;
  uint64_t drop_seed = 0;
  bool drop_seed_set = false;
  std::string kernel_csv, kernel_layer = "block0.conv1";

  json cp;
  try {
    cp_path = options.at("checkpoint").get<std::string>();
    cp = read_json_file(cp_path);
    if (cp.contains("train_config") && cp["train_config"].contains("task")) {
      const json& t = cp["train_config"]["task"];
      task = t.value("name", task);
      seq_len = t.value("seq_len", seq_len);
      one_hot = t.value("one_hot", one_hot);
    }
    if (options.contains("task")) {
      const json& t = options.at("task");
      task = t.value("name", task);
      seq_len = t.value("seq_len", seq_len);
      one_hot = t.value("one_hot", one_hot);
      size = t.value("size", size);
      seed = t.value("seed", seed);
    }
    if (options.contains("resample")) {
      const json& r = options.at("resample");
      stride = r.value("stride", stride);
      sr_ratio = r.value("sr_ratio", sr_ratio);
      drop_prob = r.value("drop_prob", drop_prob);
      keep_markers = r.value("keep_markers", keep_markers);
      drop_seed_set = r.contains("drop_seed");
      if (drop_seed_set) drop_seed = r.at("drop_seed").get<uint64_t>();
    }
    data_csv = options.value("data_csv", data_csv);
    kernel_csv = options.value("kernel_csv", kernel_csv);
    kernel_layer = options.value("kernel_layer", kernel_layer);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("bad evaluate options: ") + e.what());
  }

  if (stride < 1) fail(ErrorKind::config, "stride must be >= 1");
  if (sr_ratio != 1)
    fail(ErrorKind::config,
         "synthetic tasks provide no finer-rate signal; evaluate supports stride >= 1 with "
         "sr_ratio == 1 (resample-test probes finer grids)");
  if (!(drop_prob >= 0.0) || drop_prob >= 1.0)
    fail(ErrorKind::config, "drop_prob must lie in [0, 1)");
  if (size < 1) fail(ErrorKind::config, "task.size must be >= 1");

  if (!cp.contains("model"))
    fail(ErrorKind::data, "'" + cp_path + "' is not a training checkpoint (no model section)");
  CkcnnModel model = CkcnnModel::from_json(cp.at("model"));

  SequenceBatch data;
  if (!data_csv.empty()) {
    data = load_csv(data_csv);
  } else {
    Rng rng(seed);
    data = gen_named_task(task, seq_len, one_hot, size, rng);
  }
  if (stride > 1) data = subsample(data, stride);
  if (drop_prob > 0.0) {
    Rng dr(drop_seed_set ? drop_seed : seed + 1);
    data = apply_drop(task, keep_markers, data, drop_prob, dr);
  }

  const Resample rs{stride, 1};
  const EvalOut ve = eval_model(model, task, data, rs);

  json res{{"task", task},
           {"sequences", data.batch()},
           {"length", data.length()},
           {"stride", stride},
           {"sr_ratio", sr_ratio},
           {"drop_prob", drop_prob},
           {"loss", ve.loss},
           {"metric", ve.metric},
           {"metric_name", task == "copy" ? "accuracy_last10" : "mse"},
           {"checkpoint_epoch", cp.value("epoch", int64_t{-1})}};

  if (data.mask.numel() > 0) {
    const double* m = data.mask.ptr();
    const int64_t B = data.batch(), T = data.length();
    double lo = 1.0, hi = 0.0, total = 0.0;
    for (int64_t b = 0; b < B; ++b) {
      double kept = 0.0;
      for (int64_t t = 0; t < T; ++t) kept += m[b * T + t];
      kept /= static_cast<double>(T);
      lo = std::min(lo, kept);
      hi = std::max(hi, kept);
      total += kept;
    }
    res["kept_fraction"] = json{
        {"mean", total / static_cast<double>(B)}, {"min", lo}, {"max", hi}};
  }

  if (!kernel_csv.empty()) {
    const std::string out_dir = prepare_out_dir(options);
    const CkconvLayer& layer = find_layer(model, kernel_layer);
    Tensor kern = layer.sampled_kernel(data.length(), rs, false);
    PositionGrid grid = make_grid(layer.train_max_len, kern.dim(2), rs.stride, rs.sr_ratio, false);
    const std::string path = join_path(out_dir, kernel_csv);
    write_kernel_csv(path, kern, grid.positions);
    res["kernel_csv"] = path;
    res["kernel_length"] = kern.dim(2);
  }
  return res;
}

json fit_kernel(const json& options) {
  if (!options.is_object()) fail(ErrorKind::config, "fit-kernel options must be a JSON object");
  std::string curve = "sawtooth";
  int64_t length = 256, teeth = 8, steps = 2000, log_every = 1;
  std::string nl_name = "sine", init = "default";
  double omega0 = 30.0, lr = 1e-3;
  int hidden = 32, depth = 3;
  uint64_t seed = 0;
  try {
    curve = options.value("curve", curve);
    length = options.value("length", length);
    teeth = options.value("teeth", teeth);
    nl_name = options.value("nonlinearity", nl_name);
    omega0 = options.value("omega0", omega0);
    init = options.value("init", init);
    hidden = options.value("hidden", hidden);
    depth = options.value("depth", depth);
    steps = options.value("steps", steps);
    log_every = options.value("log_every", log_every);
    lr = options.value("lr", lr);
    seed = options.value("seed", seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("bad fit-kernel options: ") + e.what());
  }
  if (length < 2) fail(ErrorKind::config, "length must be >= 2");
  if (steps < 1) fail(ErrorKind::config, "steps must be >= 1");
  if (log_every < 1) fail(ErrorKind::config, "log_every must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail(ErrorKind::config, "lr must be positive and finite");

  const Nonlinearity nl = nonlinearity_from_string(nl_name);
  const std::string out_dir = prepare_out_dir(options);

  Rng root(seed);
  Rng curve_rng = root.fork(1);
  Rng init_rng = root.fork(2);
  const std::vector<double> target_vals = make_target_curve(curve, length, curve_rng, teeth);

  KernelNet net(1, 1, hidden, depth, nl, omega0);
  std::string init_used = init;
  if (init == "default")
    init_used = nl == Nonlinearity::sine ? "siren" : piecewise(nl) ? "uniform_knots" : "zero_bias";
  if (init_used == "siren")
    net.init_siren(init_rng);
  else if (init_used == "uniform_knots")
    net.init_uniform_knots(init_rng);
  else if (init_used == "zero_bias")
    net.init_zero_bias(init_rng);
  else
    fail(ErrorKind::config,
         "unknown init '" + init + "' (expected default, siren, uniform_knots or zero_bias)");

  std::vector<double> pos(static_cast<size_t>(length));
  for (int64_t i = 0; i < length; ++i)
    pos[static_cast<size_t>(i)] = 2.0 * static_cast<double>(i) / static_cast<double>(length - 1) - 1.0;
  const Tensor pos_col = Tensor::from({length, 1}, pos);
  const Tensor target = Tensor::from({length, 1}, target_vals);

  std::vector<NamedParam> params = net.params("kernel");
  AdamState opt;

  const std::string metrics_path = join_path(out_dir, "fit_metrics.jsonl");
  std::ofstream metrics(metrics_path);
  if (!metrics) fail(ErrorKind::data, "cannot write '" + metrics_path + "'");
  metrics << json{{"config",
                   {{"curve", curve},
                    {"length", length},
                    {"teeth", teeth},
                    {"nonlinearity", nl_name},
                    {"omega0", omega0},
                    {"init", init_used},
                    {"hidden", hidden},
                    {"depth", depth},
                    {"steps", steps},
                    {"lr", lr},
                    {"seed", seed}}},
                  {"param_count", net.param_count()}}
                 .dump()
          << "\n";

  for (int64_t s = 1; s <= steps; ++s) {
    Tape tape;
    Tensor pred = net.forward(pos_col, &tape);
    Tensor loss = mse_loss(pred, target, &tape);
    const double mse = loss.scalar();
    if (!std::isfinite(mse))
      fail(ErrorKind::divergence, "kernel fit diverged at step " + std::to_string(s));
    for (NamedParam& p : params) p.tensor.zero_grad();
    tape.backward(loss);
    adam_step(params, opt, lr);
    net.bump_version();
    if (s % log_every == 0 || s == steps)
      metrics << json{{"step", s}, {"mse", mse}}.dump() << "\n";
  }

  const Tensor fitted = net.forward(pos_col);
  const double final_mse = mse_loss(fitted, target).scalar();

  const std::string curve_path = join_path(out_dir, "fit_curve.csv");
  {
    std::ofstream cf(curve_path);
    if (!cf) fail(ErrorKind::data, "cannot write '" + curve_path + "'");
    cf << "position,target,fitted\n";
    const double* f = fitted.ptr();
    for (int64_t i = 0; i < length; ++i)
      cf << g17(pos[static_cast<size_t>(i)]) << ',' << g17(target_vals[static_cast<size_t>(i)])
         << ',' << g17(f[i]) << "\n";
  }

  return json{{"curve", curve},          {"nonlinearity", nl_name},
              {"init", init_used},       {"omega0", omega0},
              {"length", length},        {"steps", steps},
              {"final_mse", final_mse},  {"param_count", net.param_count()},
              {"metrics", metrics_path}, {"curve_csv", curve_path}};
}

json generate(const json& options) {
  if (!options.is_object()) fail(ErrorKind::config, "generate options must be a JSON object");
  std::string task = "adding";
  int64_t seq_len = 100, count = 10, stride = 1;
  bool one_hot = false, keep_markers = true;
  double drop_prob = 0.0;
  uint64_t seed = 0, drop_seed = 0;
  bool drop_seed_set = false;
  std::string out_name = "data.csv";
  try {
    if (options.contains("task")) {
      const json& t = options.at("task");
      task = t.value("name", task);
      seq_len = t.value("seq_len", seq_len);
      one_hot = t.value("one_hot", one_hot);
    }
    count = options.value("count", count);
    seed = options.value("seed", seed);
    stride = options.value("stride", stride);
    drop_prob = options.value("drop_prob", drop_prob);
    keep_markers = options.value("keep_markers", keep_markers);
    drop_seed_set = options.contains("drop_seed");
    if (drop_seed_set) drop_seed = options.at("drop_seed").get<uint64_t>();
    out_name = options.value("out", out_name);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("bad generate options: ") + e.what());
  }
  if (count < 1) fail(ErrorKind::config, "count must be >= 1");
  if (stride < 1) fail(ErrorKind::config, "stride must be >= 1");
  if (!(drop_prob >= 0.0) || drop_prob >= 1.0)
    fail(ErrorKind::config, "drop_prob must lie in [0, 1)");

  const std::string out_dir = prepare_out_dir(options);
  const std::string path = join_path(out_dir, out_name);

  Rng rng(seed);
  SequenceBatch b = gen_named_task(task, seq_len, one_hot, count, rng);
  if (stride > 1) b = subsample(b, stride);
  if (drop_prob > 0.0) {
    Rng dr(drop_seed_set ? drop_seed : seed + 1);
    b = apply_drop(task, keep_markers, b, drop_prob, dr);
  }
  save_csv(path, b);
  return json{{"path", path},           {"task", task},
              {"sequences", b.batch()}, {"channels", b.channels()},
              {"length", b.length()},   {"full_length", b.full_length}};
}

json resample_report(const json& options) {
  if (!options.is_object())
    fail(ErrorKind::config, "resample-test options must be a JSON object");
  int64_t trials = 10, length = 256, components = 5;
  int hidden = 16, depth = 3;
  double omega0 = 2.0;
  uint64_t seed = 0;
  std::vector<int64_t> strides{2};
  std::vector<int64_t> sr_ratios{2};
  try {
    trials = options.value("trials", trials);
    length = options.value("length", length);
    components = options.value("components", components);
    hidden = options.value("hidden", hidden);
    depth = options.value("depth", depth);
    omega0 = options.value("omega0", omega0);
    seed = options.value("seed", seed);
    strides = options.value("strides", strides);
    sr_ratios = options.value("sr_ratios", sr_ratios);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("bad resample-test options: ") + e.what());
  }
  if (trials < 1) fail(ErrorKind::config, "trials must be >= 1");
  if (length < 8) fail(ErrorKind::config, "length must be >= 8");
  if (components < 1) fail(ErrorKind::config, "components must be >= 1");
  for (int64_t n : strides)
    if (n < 1) fail(ErrorKind::config, "strides must be >= 1");
  for (int64_t m : sr_ratios)
    if (m < 1) fail(ErrorKind::config, "sr_ratios must be >= 1");

  std::vector<std::vector<double>> stride_rels(strides.size());
  std::vector<std::vector<double>> sr_rels(sr_ratios.size());

  Rng root(seed);
  for (int64_t trial = 0; trial < trials; ++trial) {
    Rng rng = root.fork(static_cast<uint64_t>(trial) + 1);
    CkconvLayer layer(1, 1, length, 0, hidden, depth, Nonlinearity::sine, omega0);
    layer.net.init_siren(rng);
    layer.invalidate_cache();

    // band-limited probe: a few low harmonics of the window
    std::vector<double> amp(static_cast<size_t>(components)), phase(amp.size());
    for (size_t c = 0; c < amp.size(); ++c) {
      amp[c] = rng.uniform(-1.0, 1.0);
      phase[c] = rng.uniform(0.0, 2.0 * kPi);
    }
    auto signal = [&](double step) {
      double s = 0.0;
      for (size_t c = 0; c < amp.size(); ++c)
        s += amp[c] * std::sin(2.0 * kPi * static_cast<double>(c + 1) * step /
                                   static_cast<double>(length) +
                               phase[c]);
      return s;
    };

    std::vector<double> base(static_cast<size_t>(length));
    for (int64_t i = 0; i < length; ++i) base[static_cast<size_t>(i)] = signal(static_cast<double>(i));
    const Tensor y1 = layer.forward(Tensor::from({1, 1, length}, base), Resample{}, false);
    const double* y1p = y1.ptr();

    for (size_t si = 0; si < strides.size(); ++si) {
      const int64_t n = strides[si];
      const int64_t Tn = (length - 1) / n + 1;
      std::vector<double> sub(static_cast<size_t>(Tn)), ref(static_cast<size_t>(Tn)),
          got(static_cast<size_t>(Tn));
      for (int64_t j = 0; j < Tn; ++j) {
        sub[static_cast<size_t>(j)] = base[static_cast<size_t>(j * n)];
        ref[static_cast<size_t>(j)] = y1p[j * n];
      }
      const Tensor yn = layer.forward(Tensor::from({1, 1, Tn}, sub), Resample{n, 1}, false);
      std::copy(yn.ptr(), yn.ptr() + Tn, got.begin());
      stride_rels[si].push_back(rel_l2(got, ref));
    }

    for (size_t mi = 0; mi < sr_ratios.size(); ++mi) {
      const int64_t m = sr_ratios[mi];
      const int64_t Tf = m * (length - 1) + 1;
      std::vector<double> fine(static_cast<size_t>(Tf));
      for (int64_t i = 0; i < Tf; ++i)
        fine[static_cast<size_t>(i)] = signal(static_cast<double>(i) / static_cast<double>(m));
      const Tensor yf = layer.forward(Tensor::from({1, 1, Tf}, fine), Resample{1, m}, false);
      std::vector<double> got(static_cast<size_t>(length)), ref(static_cast<size_t>(length));
      for (int64_t i = 0; i < length; ++i) {
        got[static_cast<size_t>(i)] = yf.ptr()[i * m];
        ref[static_cast<size_t>(i)] = y1p[i];
      }
      sr_rels[mi].push_back(rel_l2(got, ref));
    }
  }

  auto stats = [](const std::vector<double>& xs) {
    double mx = 0.0, sum = 0.0;
    for (double x : xs) {
      mx = std::max(mx, x);
      sum += x;
    }
    return std::pair<double, double>(sum / static_cast<double>(xs.size()), mx);
  };

  json per_stride = json::array();
  for (size_t si = 0; si < strides.size(); ++si) {
    const auto [mean, mx] = stats(stride_rels[si]);
    per_stride.push_back(json{{"stride", strides[si]}, {"mean_rel_l2", mean}, {"max_rel_l2", mx}});
  }
  json per_sr = json::array();
  for (size_t mi = 0; mi < sr_ratios.size(); ++mi) {
    const auto [mean, mx] = stats(sr_rels[mi]);
    per_sr.push_back(json{{"sr_ratio", sr_ratios[mi]},
                          {"mean_rel_l2", mean},
                          {"max_rel_l2", mx},
                          {"blur_taps", blur_taps(sr_ratios[mi])}});
  }
  return json{{"trials", trials},   {"length", length},        {"omega0", omega0},
              {"hidden", hidden},   {"components", components}, {"per_stride", per_stride},
              {"per_sr_ratio", per_sr}};
}

json equivalence_report(const json& options) {
  if (!options.is_object())
    fail(ErrorKind::config, "equivalence-test options must be a JSON object");
  int64_t trials = 50, length = 64, hidden_max = 8, in_max = 3, batch = 2;
  double rho = 0.95;
  uint64_t seed = 0;
  try {
    trials = options.value("trials", trials);
    length = options.value("length", length);
    hidden_max = options.value("hidden_max", hidden_max);
    in_max = options.value("in_channels_max", in_max);
    batch = options.value("batch", batch);
    rho = options.value("rho", rho);
    seed = options.value("seed", seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("bad equivalence-test options: ") + e.what());
  }
  if (trials < 1) fail(ErrorKind::config, "trials must be >= 1");
  if (length < 1) fail(ErrorKind::config, "length must be >= 1");
  if (hidden_max < 1 || in_max < 1 || batch < 1)
    fail(ErrorKind::config, "hidden_max, in_channels_max and batch must be >= 1");
  if (!(rho > 0.0) || rho > 1.0) fail(ErrorKind::config, "rho must lie in (0, 1]");

  Rng root(seed);
  double max_rel = 0.0, sum_rel = 0.0;
  for (int64_t trial = 0; trial < trials; ++trial) {
    Rng rng = root.fork(static_cast<uint64_t>(trial) + 1);
    const int64_t H = rng.uniform_int(1, hidden_max);
    const int64_t Cin = rng.uniform_int(1, in_max);
    Tensor W = rand_uniform({H, H}, rng, -1.0, 1.0);
    const double est = spectral_radius_est(W);
    if (est > rho) {
      double* w = W.ptr();
      for (int64_t i = 0; i < W.numel(); ++i) w[i] *= rho / est;
    }
    const Tensor U = rand_uniform({H, Cin}, rng, -1.0, 1.0);
    const Tensor x = rand_uniform({batch, Cin, length}, rng, -1.0, 1.0);

    const Tensor kern = linear_rnn_kernel(W, U, length);
    const Tensor got = causal_conv_fft(x, kern, Tensor::zeros({H}));
    const Tensor want = linear_rnn_unroll(W, U, x);

    double num = 0.0, den = 0.0;
    for (int64_t i = 0; i < got.numel(); ++i) {
      const double d = got.ptr()[i] - want.ptr()[i];
      num += d * d;
      den += want.ptr()[i] * want.ptr()[i];
    }
    const double rel = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
    max_rel = std::max(max_rel, rel);
    sum_rel += rel;
  }
  return json{{"trials", trials},
              {"length", length},
              {"max_rel_err", max_rel},
              {"mean_rel_err", sum_rel / static_cast<double>(trials)},
              {"spectral_radius_cap", rho}};
}

json sweep(const json& options) {
  if (!options.is_object()) fail(ErrorKind::config, "sweep options must be a JSON object");
  json base = json::object();
  std::vector<double> grid{1, 2, 5, 10, 20, 35, 50, 75, 100};
  int64_t epochs = 4, dataset_size = 512;
  bool refine = true;
  try {
    base = options.value("base", base);
    grid = options.value("grid", grid);
    epochs = options.value("epochs", epochs);
    dataset_size = options.value("dataset_size", dataset_size);
    refine = options.value("refine", refine);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("bad sweep options: ") + e.what());
  }
  if (!base.is_object()) fail(ErrorKind::config, "sweep base must be a train options object");
  for (const char* section : {"task", "model", "train"})
    if (base.contains(section) && !base[section].is_object())
      fail(ErrorKind::config, std::string("sweep base.") + section + " must be an object");
  if (grid.empty()) fail(ErrorKind::config, "sweep grid must not be empty");
  for (double w : grid)
    if (!(w > 0.0) || !std::isfinite(w)) fail(ErrorKind::config, "grid entries must be positive");
  if (epochs < 1) fail(ErrorKind::config, "epochs must be >= 1");
  if (dataset_size < 1) fail(ErrorKind::config, "dataset_size must be >= 1");

  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const std::string out_dir = prepare_out_dir(options);
  const std::string sweep_path = join_path(out_dir, "sweep.jsonl");
  std::ofstream sj(sweep_path);
  if (!sj) fail(ErrorKind::data, "cannot write '" + sweep_path + "'");

  std::vector<json> points;
  auto have_near = [&](double w) {
    for (const json& p : points)
      if (std::abs(p.at("omega0").get<double>() - w) <= 1e-9 * std::max(1.0, w)) return true;
    return false;
  };
  auto run_point = [&](double w) {
    json o = base;
    o["model"]["omega0"] = w;
    o["train"]["epochs"] = epochs;
    o["task"]["dataset_size"] = dataset_size;
    char tag[32];
    std::snprintf(tag, sizeof tag, "%g", w);
    o["out_dir"] = join_path(out_dir, std::string("point_w") + tag);
    const json r = train(o);
    json line{{"omega0", w},
              {"best_val_loss", r.at("best_val_loss")},
              {"best_val_metric", r.at("best_val_metric")},
              {"epochs_run", r.at("epochs_run")},
              {"out_dir", o["out_dir"]}};
    sj << line.dump() << "\n" << std::flush;
    points.push_back(std::move(line));
  };

  for (double w : grid) run_point(w);

  auto best_of = [&]() {
    size_t bi = 0;
    for (size_t i = 1; i < points.size(); ++i)
      if (points[i].at("best_val_loss").get<double>() <
          points[bi].at("best_val_loss").get<double>())
        bi = i;
    return bi;
  };

  if (refine) {
    const double wb = points[best_of()].at("omega0").get<double>();
    for (double f : {1.0 / 1.5, 1.0 / 1.2, 1.2, 1.5}) {
      const double w = std::clamp(wb * f, 0.5, 120.0);
      if (!have_near(w)) run_point(w);
    }
  }

  const json best = points[best_of()];
  std::sort(points.begin(), points.end(), [](const json& a, const json& b) {
    return a.at("omega0").get<double>() < b.at("omega0").get<double>();
  });
  return json{{"points", json(points)},
              {"best", best},
              {"refined", refine},
              {"sweep_metrics", sweep_path}};
}

}  // namespace ckconv
