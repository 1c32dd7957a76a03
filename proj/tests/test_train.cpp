#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "core/train.hpp"

using namespace ckconv;
using nlohmann::json;

namespace {

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  REQUIRE_MESSAGE(static_cast<bool>(in), "cannot open ", path);
  std::vector<json> lines;
  std::string s;
  while (std::getline(in, s))
    if (!s.empty()) lines.push_back(json::parse(s));
  return lines;
}

json tiny_adding_options(const std::string& out_dir, uint64_t seed) {
  return json{
      {"task", {{"name", "adding"}, {"seq_len", 12}, {"dataset_size", 48}, {"val_fraction", 0.25}}},
      {"model", {{"hidden_channels", 6}, {"kernel_hidden", 8}, {"omega0", 10.0}}},
      {"train", {{"epochs", 2}, {"batch_size", 16}, {"lr", 1e-3}, {"seed", seed}}},
      {"out_dir", out_dir}};
}

struct TmpDir {
  std::string path;
  explicit TmpDir(const std::string& name) : path("/tmp/ckconv_train_" + name) {
    std::filesystem::remove_all(path);
  }
  ~TmpDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("plateau scheduler divides the rate after patience flat epochs") {
  PlateauScheduler s{.lr = 1e-3, .patience = 3, .decay = 5.0, .min_delta = 1e-5};
  CHECK(s.step(1.0) == 1e-3);  // first observation sets the baseline
  CHECK(s.step(1.0) == 1e-3);
  CHECK(s.step(1.0) == 1e-3);
  CHECK(s.step(1.0) == 1e-3 / 5.0);  // third flat epoch in a row trips it
  CHECK(s.step(1.0) == 1e-3 / 5.0);
  CHECK(s.step(1.0) == 1e-3 / 5.0);
  CHECK(s.step(1.0) == 1e-3 / 5.0 / 5.0);  // second plateau
}

TEST_CASE("plateau scheduler resets on improvement and respects min_delta") {
  PlateauScheduler s{.lr = 1.0, .patience = 2, .decay = 10.0, .min_delta = 1e-3};
  CHECK(s.step(1.0) == 1.0);
  CHECK(s.step(0.99999) == 1.0);  // within min_delta: not an improvement
  CHECK(s.step(0.5) == 1.0);      // real improvement resets the bad count
  CHECK(s.bad == 0);
  CHECK(s.step(0.4995) == 1.0);  // 0.5 - 1e-3 boundary: still not an improvement
  CHECK(s.step(0.45) == 1.0);    // beats 0.5 by more than min_delta: reset again
  CHECK(s.step(0.45) == 1.0);
  CHECK(s.step(0.45) == 0.1);  // two flat epochs in a row: decay
  CHECK(s.bad == 0);           // the trip also clears the counter
}

TEST_CASE("train config derives the model interface from the task") {
  TrainConfig adding = TrainConfig::from_json(
      json{{"task", {{"name", "adding"}, {"seq_len", 64}}}});
  CHECK(adding.model.in_channels == 2);
  CHECK(adding.model.out_dim == 1);
  CHECK(adding.model.head == HeadKind::seq_label);
  CHECK(adding.model.train_max_len == 64);

  TrainConfig copy = TrainConfig::from_json(json{
      {"task", {{"name", "copy"}, {"seq_len", 40}}}, {"resample", {{"drop_prob", 0.3}}}});
  CHECK(copy.model.in_channels == 2);  // 1 data channel + mask
  CHECK(copy.model.out_dim == 9);
  CHECK(copy.model.head == HeadKind::seq_seq);
  CHECK(copy.model.train_max_len == 60);

  CHECK_THROWS_AS(TrainConfig::from_json(json{{"task", {{"name", "sorting"}}}}), Error);
  CHECK_THROWS_AS(TrainConfig::from_json(json{{"train", {{"lr", -1.0}}}}), Error);
  CHECK_THROWS_AS(TrainConfig::from_json(json{{"resample", {{"stride", 2}}}}), Error);
  CHECK_THROWS_AS(TrainConfig::from_json(json::array()), Error);
}

TEST_CASE("training writes a config echo, per-epoch metrics and a checkpoint") {
  TmpDir dir("smoke");
  json res = train(tiny_adding_options(dir.path, 5));
  CHECK(res.at("epochs_run") == 2);
  CHECK(res.at("best_epoch").get<int64_t>() >= 0);
  CHECK(res.at("param_count").get<int64_t>() > 0);

  auto lines = read_jsonl(dir.path + "/metrics.jsonl");
  REQUIRE(lines.size() == 3);  // echo + two epochs
  CHECK(lines[0].contains("config"));
  CHECK(lines[0].at("config").at("task").at("name") == "adding");
  CHECK(lines[0].at("param_count") == res.at("param_count"));
  for (size_t e = 1; e < lines.size(); ++e) {
    CHECK(lines[e].at("epoch") == static_cast<int64_t>(e - 1));
    CHECK(lines[e].contains("train_loss"));
    CHECK(lines[e].contains("val_loss"));
    CHECK(lines[e].contains("lr"));
    CHECK(lines[e].contains("wall_time"));
  }

  json cp = read_jsonl(dir.path + "/checkpoint.json").at(0);
  CHECK(cp.at("format") == "ckconv-checkpoint");
  CHECK(cp.at("model").at("format") == "ckconv-model");
  CHECK(cp.at("optimizer").contains("m"));
  CHECK(cp.at("epoch") == res.at("best_epoch"));
}

TEST_CASE("identical seeds reproduce the metrics stream bit for bit") {
  TmpDir d1("rerun_a"), d2("rerun_b");
  train(tiny_adding_options(d1.path, 7));
  train(tiny_adding_options(d2.path, 7));
  auto a = read_jsonl(d1.path + "/metrics.jsonl");
  auto b = read_jsonl(d2.path + "/metrics.jsonl");
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    a[i].erase("wall_time");
    b[i].erase("wall_time");
    CHECK(a[i].dump() == b[i].dump());
  }

  TmpDir d3("rerun_c");
  train(tiny_adding_options(d3.path, 8));  // different seed: different stream
  auto c = read_jsonl(d3.path + "/metrics.jsonl");
  CHECK(a[1].at("train_loss") != c[1].at("train_loss"));
}

TEST_CASE("a reloaded checkpoint evaluates identically across processes and calls") {
  TmpDir dir("reload");
  json res = train(tiny_adding_options(dir.path, 9));
  json eval_opts{{"checkpoint", res.at("checkpoint")},
                 {"task", {{"size", 32}, {"seed", 123}}}};
  json e1 = evaluate(eval_opts);
  json e2 = evaluate(eval_opts);
  CHECK(e1.at("loss").get<double>() == e2.at("loss").get<double>());
  CHECK(e1.at("task") == "adding");
  CHECK(e1.at("length") == 12);
  CHECK(e1.at("sequences") == 32);
}

TEST_CASE("evaluate applies stride and drop protocols") {
  TmpDir dir("protocols");
  json res = train(tiny_adding_options(dir.path, 10));

  json strided = evaluate(json{{"checkpoint", res.at("checkpoint")},
                               {"task", {{"size", 16}, {"seed", 3}}},
                               {"resample", {{"stride", 2}}}});
  CHECK(strided.at("length") == 6);

  // this model has no mask channel, so dropped-step evaluation must refuse
  json drop_opts{{"checkpoint", res.at("checkpoint")},
                 {"task", {{"size", 16}, {"seed", 3}}},
                 {"resample", {{"drop_prob", 0.3}}}};
  CHECK_THROWS_AS(evaluate(drop_opts), Error);

  // finer grids have no synthetic ground truth
  json finer{{"checkpoint", res.at("checkpoint")}, {"resample", {{"sr_ratio", 2}}}};
  try {
    evaluate(finer);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.exit_code() == 2);
  }
}

TEST_CASE("training with a drop protocol adds the mask channel and evaluates clean or dropped") {
  TmpDir dir("dropped");
  json opts = tiny_adding_options(dir.path, 11);
  opts["resample"] = json{{"drop_prob", 0.3}};
  json res = train(opts);
  auto lines = read_jsonl(dir.path + "/metrics.jsonl");
  CHECK(lines[0].at("config").at("model").at("in_channels") == 3);

  // dropped evaluation reports how much survived
  json dropped = evaluate(json{{"checkpoint", res.at("checkpoint")},
                               {"task", {{"size", 24}, {"seed", 5}}},
                               {"resample", {{"drop_prob", 0.3}}}});
  CHECK(dropped.contains("kept_fraction"));
  const double mean_kept = dropped.at("kept_fraction").at("mean").get<double>();
  CHECK(mean_kept > 0.5);
  CHECK(mean_kept < 0.9);

  // the same model accepts fully observed data (all-ones mask channel)
  json clean = evaluate(
      json{{"checkpoint", res.at("checkpoint")}, {"task", {{"size", 8}, {"seed", 6}}}});
  CHECK(!clean.contains("kept_fraction"));
  CHECK(std::isfinite(clean.at("loss").get<double>()));
}

TEST_CASE("evaluate can dump a rendered kernel as CSV") {
  TmpDir dir("kdump");
  json res = train(tiny_adding_options(dir.path, 12));
  json e = evaluate(json{{"checkpoint", res.at("checkpoint")},
                         {"task", {{"size", 4}, {"seed", 1}}},
                         {"out_dir", dir.path},
                         {"kernel_csv", "kernel.csv"},
                         {"kernel_layer", "block1.conv2"}});
  REQUIRE(e.contains("kernel_csv"));
  std::ifstream in(e.at("kernel_csv").get<std::string>());
  REQUIRE(static_cast<bool>(in));
  std::string header;
  std::getline(in, header);
  CHECK(header == "position,out_channel,in_channel,value");
  int64_t rows = 0;
  for (std::string line; std::getline(in, line);) rows += !line.empty();
  CHECK(rows == 6 * 6 * 12);  // out x in x length

  CHECK_THROWS_AS(evaluate(json{{"checkpoint", res.at("checkpoint")},
                                {"kernel_csv", "k.csv"},
                                {"kernel_layer", "block7.conv1"}}),
                  Error);
}

TEST_CASE("evaluate consumes CSV datasets") {
  TmpDir dir("csveval");
  json res = train(tiny_adding_options(dir.path, 13));
  json gen = generate(json{{"task", {{"name", "adding"}, {"seq_len", 12}}},
                           {"count", 6},
                           {"seed", 77},
                           {"out_dir", dir.path},
                           {"out", "eval.csv"}});
  json e = evaluate(
      json{{"checkpoint", res.at("checkpoint")}, {"data_csv", gen.at("path")}});
  CHECK(e.at("sequences") == 6);
  CHECK(e.at("length") == 12);
  CHECK(std::isfinite(e.at("loss").get<double>()));
}

TEST_CASE("copy task trains end to end and reports accuracy") {
  TmpDir dir("copy");
  json opts{{"task", {{"name", "copy"}, {"seq_len", 6}, {"dataset_size", 32}, {"val_fraction", 0.25}}},
            {"model", {{"hidden_channels", 5}, {"kernel_hidden", 8}}},
            {"train", {{"epochs", 1}, {"batch_size", 16}, {"lr", 1e-3}, {"seed", 2}}},
            {"out_dir", dir.path}};
  json res = train(opts);
  const double acc = res.at("best_val_metric").get<double>();
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  json e = evaluate(json{{"checkpoint", res.at("checkpoint")},
                         {"task", {{"size", 8}, {"seed", 4}}}});
  CHECK(e.at("metric_name") == "accuracy_last10");
}

TEST_CASE("fit-kernel writes metrics and the fitted curve") {
  TmpDir dir("fitk");
  json res = fit_kernel(json{{"curve", "sine"},
                             {"length", 64},
                             {"steps", 300},
                             {"hidden", 16},
                             {"seed", 3},
                             {"log_every", 50},
                             {"out_dir", dir.path}});
  CHECK(res.at("final_mse").get<double>() < 0.05);  // sine is easy
  auto lines = read_jsonl(dir.path + "/fit_metrics.jsonl");
  REQUIRE(lines.size() >= 2);
  CHECK(lines[0].contains("config"));
  CHECK(lines.back().at("step") == 300);

  std::ifstream in(dir.path + "/fit_curve.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "position,target,fitted");
  int64_t rows = 0;
  for (std::string line; std::getline(in, line);) rows += !line.empty();
  CHECK(rows == 64);

  CHECK_THROWS_AS(fit_kernel(json{{"curve", "spiral"}, {"out_dir", dir.path}}), Error);
  CHECK_THROWS_AS(
      fit_kernel(json{{"nonlinearity", "sine"}, {"init", "uniform_knots"}, {"out_dir", dir.path}}),
      Error);
}

TEST_CASE("generate honors stride and drop transforms") {
  TmpDir dir("gen");
  json res = generate(json{{"task", {{"name", "copy"}, {"seq_len", 8}}},
                           {"count", 3},
                           {"seed", 5},
                           {"stride", 2},
                           {"out_dir", dir.path},
                           {"out", "copy.csv"}});
  CHECK(res.at("length") == 14);  // (8 + 20 - 1) / 2 + 1
  CHECK(res.at("full_length") == 28);
  SequenceBatch back = load_csv(res.at("path").get<std::string>());
  CHECK(back.length() == 14);
  CHECK(back.positions.size() == 14);

  json dropped = generate(json{{"task", {{"name", "adding"}, {"seq_len", 20}}},
                               {"count", 5},
                               {"seed", 6},
                               {"drop_prob", 0.4},
                               {"out_dir", dir.path},
                               {"out", "dropped.csv"}});
  SequenceBatch db = load_csv(dropped.at("path").get<std::string>());
  CHECK(db.mask.numel() == 5 * 20);
}

TEST_CASE("resample and equivalence reports return sane summaries") {
  json rr = resample_report(json{{"trials", 2},
                                 {"length", 64},
                                 {"components", 3},
                                 {"hidden", 8},
                                 {"strides", {2}},
                                 {"sr_ratios", {2}},
                                 {"seed", 1}});
  REQUIRE(rr.at("per_stride").size() == 1);
  CHECK(rr.at("per_stride")[0].at("stride") == 2);
  CHECK(rr.at("per_stride")[0].at("max_rel_l2").get<double>() < 1.0);
  REQUIRE(rr.at("per_sr_ratio").size() == 1);
  CHECK(rr.at("per_sr_ratio")[0].at("blur_taps").size() == 5);

  json eq = equivalence_report(json{{"trials", 5}, {"length", 32}, {"seed", 2}});
  CHECK(eq.at("max_rel_err").get<double>() < 1e-10);
  CHECK(eq.at("trials") == 5);
}

TEST_CASE("sweep ranks omega0 candidates and refines around the best") {
  TmpDir dir("sweep");
  json base{{"task", {{"name", "adding"}, {"seq_len", 8}, {"val_fraction", 0.25}}},
            {"model", {{"hidden_channels", 4}, {"kernel_hidden", 6}}},
            {"train", {{"batch_size", 16}, {"lr", 1e-3}, {"seed", 3}}}};
  json res = sweep(json{{"base", base},
                        {"grid", {5.0, 20.0}},
                        {"epochs", 1},
                        {"dataset_size", 32},
                        {"refine", false},
                        {"out_dir", dir.path}});
  REQUIRE(res.at("points").size() == 2);
  CHECK(res.at("best").contains("omega0"));
  const double best_loss = res.at("best").at("best_val_loss").get<double>();
  for (const json& p : res.at("points"))
    CHECK(best_loss <= p.at("best_val_loss").get<double>());
  auto lines = read_jsonl(dir.path + "/sweep.jsonl");
  CHECK(lines.size() == 2);

  CHECK_THROWS_AS(sweep(json{{"grid", json::array()}}), Error);
}

TEST_CASE("error classes map to their exit codes") {
  try {
    train(json{{"task", {{"name", "sorting"}}}});
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.exit_code() == 2);
  }
  try {
    evaluate(json{{"checkpoint", "/nonexistent/nowhere.json"}});
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.exit_code() == 3);
  }
  TmpDir dir("notacp");
  {
    std::filesystem::create_directories(dir.path);
    std::ofstream out(dir.path + "/junk.json");
    out << "{\"hello\": 1}";
  }
  try {
    evaluate(json{{"checkpoint", dir.path + "/junk.json"}});
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.exit_code() == 3);
  }
}
