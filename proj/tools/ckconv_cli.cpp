// Command-line front end. Everything engine-side goes through the C API;
// this file only assembles option documents and reports results.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ckconv/ckconv.h"

using nlohmann::json;

namespace {

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open '" << path << "'\n";
    std::exit(3);
  }
  try {
    json j;
    in >> j;
    if (!j.is_object()) {
      std::cerr << "error: '" << path << "' must hold a JSON object\n";
      std::exit(3);
    }
    return j;
  } catch (const json::exception& e) {
    std::cerr << "error: cannot parse '" << path << "': " << e.what() << "\n";
    std::exit(3);
  }
}

using VerbFn = ckc_status (*)(ckc_engine*, const char*, char**);

int run_verb(VerbFn fn, const json& opts) {
  ckc_engine* eng = ckc_engine_create();
  if (!eng) {
    std::cerr << "error: cannot create engine\n";
    return 1;
  }
  char* result = nullptr;
  const ckc_status st = fn(eng, opts.dump().c_str(), &result);
  if (st == CKC_OK) {
    std::cout << (result ? result : "{}") << "\n";
  } else {
    std::cerr << "error: " << ckc_last_error(eng) << "\n";
  }
  ckc_string_free(result);
  ckc_engine_destroy(eng);
  return static_cast<int>(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequence modeling with continuous convolution kernels"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ckc_version()));

  int rc = 0;

  // ---------------- train ----------------
  auto* tr = app.add_subcommand("train", "train a model on a synthetic task");
  std::string tr_config, tr_out_dir, tr_task, tr_backbone, tr_kernel_nl;
  uint64_t tr_seed = 0;
  int64_t tr_seq_len = 0, tr_dataset = 0, tr_epochs = 0, tr_batch = 0, tr_patience = 0;
  int64_t tr_blocks = 0, tr_hidden = 0, tr_khidden = 0, tr_kdepth = 0, tr_horizon = 0;
  double tr_val_frac = 0, tr_lr = 0, tr_wd = 0, tr_lr_decay = 0, tr_min_delta = 0;
  double tr_omega0 = 0, tr_dropout = 0, tr_in_dropout = 0, tr_drop_prob = 0;
  bool tr_one_hot = false, tr_fixed_data = false, tr_no_keep = false;
  tr->add_option("--config", tr_config, "JSON options file (flags override it)");
  tr->add_option("--out-dir", tr_out_dir, "output directory for metrics + checkpoint")->required();
  tr->add_option("--seed", tr_seed, "run seed")->required();
  auto* o_task = tr->add_option("--task", tr_task, "adding | copy");
  auto* o_seq = tr->add_option("--seq-len", tr_seq_len, "task sequence length parameter");
  auto* o_ds = tr->add_option("--dataset-size", tr_dataset, "training sequences per epoch");
  auto* o_vf = tr->add_option("--val-fraction", tr_val_frac, "validation share of dataset-size");
  auto* o_oh = tr->add_flag("--one-hot", tr_one_hot, "one-hot input for the copy task");
  auto* o_fd = tr->add_flag("--fixed-data", tr_fixed_data, "reuse one dataset instead of resampling per epoch");
  auto* o_ep = tr->add_option("--epochs", tr_epochs, "training epochs");
  auto* o_bs = tr->add_option("--batch-size", tr_batch, "minibatch size");
  auto* o_lr = tr->add_option("--lr", tr_lr, "learning rate");
  auto* o_wd = tr->add_option("--weight-decay", tr_wd, "decoupled weight decay");
  auto* o_pat = tr->add_option("--patience", tr_patience, "epochs without improvement before lr drops");
  auto* o_lrd = tr->add_option("--lr-decay", tr_lr_decay, "lr division factor on plateau");
  auto* o_md = tr->add_option("--min-delta", tr_min_delta, "improvement threshold for the plateau scheduler");
  auto* o_blk = tr->add_option("--blocks", tr_blocks, "residual blocks");
  auto* o_hid = tr->add_option("--hidden-channels", tr_hidden, "channels inside the backbone");
  auto* o_om = tr->add_option("--omega0", tr_omega0, "kernel net sine frequency");
  auto* o_do = tr->add_option("--dropout", tr_dropout, "dropout inside blocks");
  auto* o_ido = tr->add_option("--input-dropout", tr_in_dropout, "dropout on the raw input");
  auto* o_bb = tr->add_option("--backbone", tr_backbone, "backbone nonlinearity (relu | leaky_relu | swish | sine)");
  auto* o_knl = tr->add_option("--kernel-nonlinearity", tr_kernel_nl, "kernel net nonlinearity");
  auto* o_khid = tr->add_option("--kernel-hidden", tr_khidden, "kernel net width");
  auto* o_kdep = tr->add_option("--kernel-depth", tr_kdepth, "kernel net affine layers");
  auto* o_hor = tr->add_option("--horizon", tr_horizon, "kernel length cap (0 = span the input)");
  auto* o_dp = tr->add_option("--drop-prob", tr_drop_prob, "probability of dropping each step");
  auto* o_nkm = tr->add_flag("--no-keep-markers", tr_no_keep, "allow dropping the marked steps of adding");
  bool tr_deterministic = false;
  tr->add_flag("--deterministic", tr_deterministic,
               "single-threaded bit-reproducible execution (always on; flag pins the contract)");
  tr->callback([&] {
    try {
      json o = tr_config.empty() ? json::object() : load_config_file(tr_config);
      o["out_dir"] = tr_out_dir;
      o["train"]["seed"] = tr_seed;
      if (o_task->count()) o["task"]["name"] = tr_task;
      if (o_seq->count()) o["task"]["seq_len"] = tr_seq_len;
      if (o_ds->count()) o["task"]["dataset_size"] = tr_dataset;
      if (o_vf->count()) o["task"]["val_fraction"] = tr_val_frac;
      if (o_oh->count()) o["task"]["one_hot"] = tr_one_hot;
      if (o_fd->count()) o["task"]["regenerate_each_epoch"] = !tr_fixed_data;
      if (o_ep->count()) o["train"]["epochs"] = tr_epochs;
      if (o_bs->count()) o["train"]["batch_size"] = tr_batch;
      if (o_lr->count()) o["train"]["lr"] = tr_lr;
      if (o_wd->count()) o["train"]["weight_decay"] = tr_wd;
      if (o_pat->count()) o["train"]["patience"] = tr_patience;
      if (o_lrd->count()) o["train"]["lr_decay"] = tr_lr_decay;
      if (o_md->count()) o["train"]["min_delta"] = tr_min_delta;
      if (o_blk->count()) o["model"]["num_blocks"] = tr_blocks;
      if (o_hid->count()) o["model"]["hidden_channels"] = tr_hidden;
      if (o_om->count()) o["model"]["omega0"] = tr_omega0;
      if (o_do->count()) o["model"]["dropout"] = tr_dropout;
      if (o_ido->count()) o["model"]["input_dropout"] = tr_in_dropout;
      if (o_bb->count()) o["model"]["backbone"] = tr_backbone;
      if (o_knl->count()) o["model"]["kernel_nonlinearity"] = tr_kernel_nl;
      if (o_khid->count()) o["model"]["kernel_hidden"] = tr_khidden;
      if (o_kdep->count()) o["model"]["kernel_depth"] = tr_kdepth;
      if (o_hor->count()) o["model"]["horizon"] = tr_horizon;
      if (o_dp->count()) o["resample"]["drop_prob"] = tr_drop_prob;
      if (o_nkm->count()) o["resample"]["keep_markers"] = !tr_no_keep;
      rc = run_verb(&ckc_train, o);
    } catch (const json::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      rc = 2;
    }
  });

  // ---------------- evaluate ----------------
  auto* ev = app.add_subcommand("evaluate", "run a checkpoint over fresh or CSV data");
  std::string ev_checkpoint, ev_config, ev_out_dir, ev_task, ev_data_csv, ev_kcsv, ev_klayer;
  int64_t ev_seq_len = 0, ev_size = 0, ev_stride = 0, ev_sr = 0;
  uint64_t ev_seed = 0, ev_drop_seed = 0;
  double ev_drop_prob = 0;
  bool ev_one_hot = false, ev_no_keep = false;
  ev->add_option("--checkpoint", ev_checkpoint, "checkpoint.json from train")->required();
  ev->add_option("--config", ev_config, "JSON options file (flags override it)");
  ev->add_option("--out-dir", ev_out_dir, "directory for CSV dumps");
  auto* e_task = ev->add_option("--task", ev_task, "override the checkpoint's task");
  auto* e_seq = ev->add_option("--seq-len", ev_seq_len, "override the task length");
  auto* e_size = ev->add_option("--size", ev_size, "evaluation sequences to generate");
  auto* e_seed = ev->add_option("--seed", ev_seed, "data seed");
  auto* e_oh = ev->add_flag("--one-hot", ev_one_hot, "one-hot input for the copy task");
  auto* e_csv = ev->add_option("--data-csv", ev_data_csv, "evaluate this CSV instead of generating data");
  auto* e_str = ev->add_option("--stride", ev_stride, "keep every n-th step");
  auto* e_sr = ev->add_option("--sr-ratio", ev_sr, "rate ratio (must stay 1 for synthetic tasks)");
  auto* e_dp = ev->add_option("--drop-prob", ev_drop_prob, "randomly drop steps before evaluating");
  auto* e_dseed = ev->add_option("--drop-seed", ev_drop_seed, "seed of the drop pattern");
  auto* e_nkm = ev->add_flag("--no-keep-markers", ev_no_keep, "allow dropping the marked steps of adding");
  auto* e_kcsv = ev->add_option("--kernel-csv", ev_kcsv, "dump one layer's rendered kernel to this CSV");
  auto* e_klay = ev->add_option("--kernel-layer", ev_klayer, "which layer to dump (block<i>.conv<1|2>)");
  ev->callback([&] {
    try {
      json o = ev_config.empty() ? json::object() : load_config_file(ev_config);
      o["checkpoint"] = ev_checkpoint;
      if (!ev_out_dir.empty()) o["out_dir"] = ev_out_dir;
      if (e_task->count()) o["task"]["name"] = ev_task;
      if (e_seq->count()) o["task"]["seq_len"] = ev_seq_len;
      if (e_size->count()) o["task"]["size"] = ev_size;
      if (e_seed->count()) o["task"]["seed"] = ev_seed;
      if (e_oh->count()) o["task"]["one_hot"] = ev_one_hot;
      if (e_csv->count()) o["data_csv"] = ev_data_csv;
      if (e_str->count()) o["resample"]["stride"] = ev_stride;
      if (e_sr->count()) o["resample"]["sr_ratio"] = ev_sr;
      if (e_dp->count()) o["resample"]["drop_prob"] = ev_drop_prob;
      if (e_dseed->count()) o["resample"]["drop_seed"] = ev_drop_seed;
      if (e_nkm->count()) o["resample"]["keep_markers"] = !ev_no_keep;
      if (e_kcsv->count()) o["kernel_csv"] = ev_kcsv;
      if (e_klay->count()) o["kernel_layer"] = ev_klayer;
      rc = run_verb(&ckc_evaluate, o);
    } catch (const json::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      rc = 2;
    }
  });

  // ---------------- fit-kernel ----------------
  auto* fk = app.add_subcommand("fit-kernel", "fit one kernel net to a target curve");
  std::string fk_config, fk_out_dir, fk_curve, fk_nl, fk_init;
  int64_t fk_length = 0, fk_teeth = 0, fk_steps = 0, fk_hidden = 0, fk_depth = 0, fk_log = 0;
  double fk_omega0 = 0, fk_lr = 0;
  uint64_t fk_seed = 0;
  fk->add_option("--config", fk_config, "JSON options file (flags override it)");
  fk->add_option("--out-dir", fk_out_dir, "output directory");
  auto* f_curve = fk->add_option("--curve", fk_curve, "gaussian | step | sawtooth | sine | random_noise");
  auto* f_len = fk->add_option("--length", fk_length, "points on [-1, 1]");
  auto* f_teeth = fk->add_option("--teeth", fk_teeth, "sawtooth ramp count");
  auto* f_nl = fk->add_option("--nonlinearity", fk_nl, "kernel net nonlinearity");
  auto* f_om = fk->add_option("--omega0", fk_omega0, "sine frequency");
  auto* f_init = fk->add_option("--init", fk_init, "default | siren | uniform_knots | zero_bias");
  auto* f_hid = fk->add_option("--hidden", fk_hidden, "kernel net width");
  auto* f_dep = fk->add_option("--depth", fk_depth, "kernel net affine layers");
  auto* f_steps = fk->add_option("--steps", fk_steps, "optimization steps");
  auto* f_lr = fk->add_option("--lr", fk_lr, "learning rate");
  auto* f_seed = fk->add_option("--seed", fk_seed, "run seed");
  auto* f_log = fk->add_option("--log-every", fk_log, "steps between metric lines");
  fk->callback([&] {
    try {
      json o = fk_config.empty() ? json::object() : load_config_file(fk_config);
      if (!fk_out_dir.empty()) o["out_dir"] = fk_out_dir;
      if (f_curve->count()) o["curve"] = fk_curve;
      if (f_len->count()) o["length"] = fk_length;
      if (f_teeth->count()) o["teeth"] = fk_teeth;
      if (f_nl->count()) o["nonlinearity"] = fk_nl;
      if (f_om->count()) o["omega0"] = fk_omega0;
      if (f_init->count()) o["init"] = fk_init;
      if (f_hid->count()) o["hidden"] = fk_hidden;
      if (f_dep->count()) o["depth"] = fk_depth;
      if (f_steps->count()) o["steps"] = fk_steps;
      if (f_lr->count()) o["lr"] = fk_lr;
      if (f_seed->count()) o["seed"] = fk_seed;
      if (f_log->count()) o["log_every"] = fk_log;
      rc = run_verb(&ckc_fit_kernel, o);
    } catch (const json::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      rc = 2;
    }
  });

  // ---------------- generate ----------------
  auto* ge = app.add_subcommand("generate", "write a synthetic task dataset as CSV");
  std::string ge_task = "adding", ge_out;
  int64_t ge_seq_len = 0, ge_count = 0, ge_stride = 0;
  uint64_t ge_seed = 0, ge_drop_seed = 0;
  double ge_drop_prob = 0;
  bool ge_one_hot = false, ge_no_keep = false;
  std::string ge_out_dir;
  auto* g_task = ge->add_option("--task", ge_task, "adding | copy");
  auto* g_seq = ge->add_option("--seq-len", ge_seq_len, "task sequence length parameter");
  auto* g_oh = ge->add_flag("--one-hot", ge_one_hot, "one-hot input for the copy task");
  auto* g_count = ge->add_option("--count", ge_count, "sequences to generate");
  auto* g_seed = ge->add_option("--seed", ge_seed, "data seed");
  auto* g_str = ge->add_option("--stride", ge_stride, "keep every n-th step");
  auto* g_dp = ge->add_option("--drop-prob", ge_drop_prob, "randomly drop steps");
  auto* g_dseed = ge->add_option("--drop-seed", ge_drop_seed, "seed of the drop pattern");
  auto* g_nkm = ge->add_flag("--no-keep-markers", ge_no_keep, "allow dropping the marked steps of adding");
  auto* g_out = ge->add_option("--out", ge_out, "CSV file name");
  ge->add_option("--out-dir", ge_out_dir, "output directory");
  ge->callback([&] {
    try {
      json o = json::object();
      if (!ge_out_dir.empty()) o["out_dir"] = ge_out_dir;
      if (g_task->count()) o["task"]["name"] = ge_task;
      if (g_seq->count()) o["task"]["seq_len"] = ge_seq_len;
      if (g_oh->count()) o["task"]["one_hot"] = ge_one_hot;
      if (g_count->count()) o["count"] = ge_count;
      if (g_seed->count()) o["seed"] = ge_seed;
      if (g_str->count()) o["stride"] = ge_stride;
      if (g_dp->count()) o["drop_prob"] = ge_drop_prob;
      if (g_dseed->count()) o["drop_seed"] = ge_drop_seed;
      if (g_nkm->count()) o["keep_markers"] = !ge_no_keep;
      if (g_out->count()) o["out"] = ge_out;
      rc = run_verb(&ckc_generate, o);
    } catch (const json::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      rc = 2;
    }
  });

  // ---------------- resample-test ----------------
  auto* rs = app.add_subcommand("resample-test", "probe grid transfer of random layers");
  int64_t rs_trials = 0, rs_length = 0, rs_components = 0, rs_hidden = 0, rs_depth = 0;
  double rs_omega0 = 0;
  uint64_t rs_seed = 0;
  std::vector<int64_t> rs_strides, rs_srs;
  auto* r_tr = rs->add_option("--trials", rs_trials, "random layers to draw");
  auto* r_len = rs->add_option("--length", rs_length, "signal length");
  auto* r_comp = rs->add_option("--components", rs_components, "harmonics in the probe signal");
  auto* r_hid = rs->add_option("--hidden", rs_hidden, "kernel net width");
  auto* r_dep = rs->add_option("--depth", rs_depth, "kernel net affine layers");
  auto* r_om = rs->add_option("--omega0", rs_omega0, "sine frequency of the random kernels");
  auto* r_str = rs->add_option("--strides", rs_strides, "coarser grids to test");
  auto* r_srs = rs->add_option("--sr-ratios", rs_srs, "finer grids to test");
  auto* r_seed = rs->add_option("--seed", rs_seed, "run seed");
  rs->callback([&] {
    json o = json::object();
    if (r_tr->count()) o["trials"] = rs_trials;
    if (r_len->count()) o["length"] = rs_length;
    if (r_comp->count()) o["components"] = rs_components;
    if (r_hid->count()) o["hidden"] = rs_hidden;
    if (r_dep->count()) o["depth"] = rs_depth;
    if (r_om->count()) o["omega0"] = rs_omega0;
    if (r_str->count()) o["strides"] = rs_strides;
    if (r_srs->count()) o["sr_ratios"] = rs_srs;
    if (r_seed->count()) o["seed"] = rs_seed;
    rc = run_verb(&ckc_resample_report, o);
  });

  // ---------------- equivalence-test ----------------
  auto* eq = app.add_subcommand("equivalence-test",
                                "check recurrence kernels against unrolled recurrences");
  int64_t eq_trials = 0, eq_length = 0, eq_hmax = 0, eq_cmax = 0, eq_batch = 0;
  double eq_rho = 0;
  uint64_t eq_seed = 0;
  auto* q_tr = eq->add_option("--trials", eq_trials, "random recurrences to draw");
  auto* q_len = eq->add_option("--length", eq_length, "sequence length");
  auto* q_hm = eq->add_option("--hidden-max", eq_hmax, "max recurrence width");
  auto* q_cm = eq->add_option("--in-channels-max", eq_cmax, "max input channels");
  auto* q_ba = eq->add_option("--batch", eq_batch, "sequences per trial");
  auto* q_rho = eq->add_option("--rho", eq_rho, "spectral radius cap");
  auto* q_seed = eq->add_option("--seed", eq_seed, "run seed");
  eq->callback([&] {
    json o = json::object();
    if (q_tr->count()) o["trials"] = eq_trials;
    if (q_len->count()) o["length"] = eq_length;
    if (q_hm->count()) o["hidden_max"] = eq_hmax;
    if (q_cm->count()) o["in_channels_max"] = eq_cmax;
    if (q_ba->count()) o["batch"] = eq_batch;
    if (q_rho->count()) o["rho"] = eq_rho;
    if (q_seed->count()) o["seed"] = eq_seed;
    rc = run_verb(&ckc_equivalence_report, o);
  });

  // ---------------- sweep ----------------
  auto* sw = app.add_subcommand("sweep", "grid-then-refine search over omega0");
  std::string sw_config, sw_out_dir;
  std::vector<double> sw_grid;
  int64_t sw_epochs = 0, sw_dataset = 0;
  uint64_t sw_seed = 0;
  bool sw_no_refine = false;
  sw->add_option("--config", sw_config, "train options the sweep points share");
  sw->add_option("--out-dir", sw_out_dir, "output directory")->required();
  auto* s_grid = sw->add_option("--grid", sw_grid, "omega0 values of the first stage");
  auto* s_ep = sw->add_option("--epochs", sw_epochs, "epochs per point");
  auto* s_ds = sw->add_option("--dataset-size", sw_dataset, "training sequences per point");
  auto* s_seed = sw->add_option("--seed", sw_seed, "run seed shared by every point");
  auto* s_nr = sw->add_flag("--no-refine", sw_no_refine, "skip the refinement stage");
  sw->callback([&] {
    try {
      json o = json::object();
      if (!sw_config.empty()) {
        json c = load_config_file(sw_config);
        if (c.contains("base"))
          o = c;
        else
          o["base"] = c;
      }
      o["out_dir"] = sw_out_dir;
      if (s_grid->count()) o["grid"] = sw_grid;
      if (s_ep->count()) o["epochs"] = sw_epochs;
      if (s_ds->count()) o["dataset_size"] = sw_dataset;
      if (s_nr->count()) o["refine"] = !sw_no_refine;
      if (s_seed->count()) o["base"]["train"]["seed"] = sw_seed;
      rc = run_verb(&ckc_sweep, o);
    } catch (const json::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      rc = 2;
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return rc;
}
