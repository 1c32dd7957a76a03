#include "core/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "core/conv.hpp"

namespace ckconv {

SequenceBatch gen_copy_memory(int64_t T, int64_t batch, Rng& rng, bool one_hot) {
  if (T < 1) fail(ErrorKind::config, "copy task: delay T must be >= 1");
  if (batch < 1) fail(ErrorKind::config, "copy task: batch must be >= 1");
  const int64_t L = T + 20;
  const int64_t C = one_hot ? 10 : 1;
  SequenceBatch out;
  out.values = Tensor::zeros({batch, C, L});
  out.classes.assign(static_cast<size_t>(batch * L), 0);
  out.full_length = L;
  double* px = out.values.ptr();
  for (int64_t b = 0; b < batch; ++b) {
    int64_t digits[10];
    for (int64_t i = 0; i < 10; ++i) digits[i] = rng.uniform_int(1, 8);
    auto put = [&](int64_t t, int64_t symbol) {
      if (one_hot)
        px[(b * C + symbol) * L + t] = 1.0;
      else
        px[b * L + t] = static_cast<double>(symbol);
    };
    for (int64_t i = 0; i < 10; ++i) put(i, digits[i]);
    // steps 10 .. 10+T-2 stay blank (symbol 0); one-hot marks channel 0
    if (one_hot)
      for (int64_t t = 10; t < 10 + T - 1; ++t) px[(b * C + 0) * L + t] = 1.0;
    for (int64_t t = T + 9; t < L; ++t) put(t, 9);
    for (int64_t i = 0; i < 10; ++i) out.classes[static_cast<size_t>(b * L + (L - 10 + i))] = digits[i];
  }
  return out;
}

SequenceBatch gen_adding_problem(int64_t T, int64_t batch, Rng& rng) {
  if (T < 2) fail(ErrorKind::config, "adding task: length T must be >= 2");
  if (batch < 1) fail(ErrorKind::config, "adding task: batch must be >= 1");
  SequenceBatch out;
  out.values = Tensor::zeros({batch, 2, T});
  out.targets = Tensor::zeros({batch, 1});
  out.full_length = T;
  double* px = out.values.ptr();
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t t = 0; t < T; ++t) px[(b * 2 + 0) * T + t] = rng.uniform();
    const int64_t i1 = rng.uniform_int(0, T / 2 - 1);
    const int64_t i2 = rng.uniform_int(T / 2, T - 1);
    px[(b * 2 + 1) * T + i1] = 1.0;
    px[(b * 2 + 1) * T + i2] = 1.0;
    out.targets.ptr()[b] = px[(b * 2 + 0) * T + i1] + px[(b * 2 + 0) * T + i2];
  }
  return out;
}

std::vector<double> make_target_curve(const std::string& kind, int64_t length, Rng& rng, int64_t teeth) {
  if (length < 2) fail(ErrorKind::config, "target curve: length must be >= 2");
  std::vector<double> v(static_cast<size_t>(length));
  if (kind == "gaussian") {
    const double sigma = 0.3;
    for (int64_t i = 0; i < length; ++i) {
      const double x = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(length - 1);
      v[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
    }
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    for (double& y : v) y = 2.0 * (y - *mn) / (*mx - *mn) - 1.0;
  } else if (kind == "step") {
    for (int64_t i = 0; i < length; ++i) v[static_cast<size_t>(i)] = i < length / 2 ? -1.0 : 1.0;
  } else if (kind == "sawtooth") {
    if (teeth < 1) fail(ErrorKind::config, "target curve: teeth must be >= 1");
    const int64_t period = std::max<int64_t>(2, length / teeth);
    for (int64_t i = 0; i < length; ++i)
      v[static_cast<size_t>(i)] =
          -1.0 + 2.0 * static_cast<double>(i % period) / static_cast<double>(period - 1);
  } else if (kind == "sine") {
    for (int64_t i = 0; i < length; ++i)
      v[static_cast<size_t>(i)] =
          std::sin(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(length - 1));
  } else if (kind == "random_noise") {
    for (double& y : v) y = rng.uniform(-1.0, 1.0);
  } else {
    fail(ErrorKind::config, "unknown target curve '" + kind +
                                "' (expected gaussian|step|sawtooth|sine|random_noise)");
  }
  return v;
}

SequenceBatch subsample(const SequenceBatch& batch, int64_t n) {
  if (n < 1) fail(ErrorKind::config, "subsample: factor must be >= 1");
  if (!batch.values.defined()) fail(ErrorKind::contract, "subsample: empty batch");
  const int64_t B = batch.batch(), C = batch.channels(), T = batch.length();
  std::vector<int64_t> kept;
  for (int64_t i = 0; i < T; i += n) kept.push_back(i);
  const int64_t m = static_cast<int64_t>(kept.size());

  SequenceBatch out;
  out.values = Tensor::zeros({B, C, m});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t j = 0; j < m; ++j)
        out.values.ptr()[(b * C + c) * m + j] = batch.values.ptr()[(b * C + c) * T + kept[static_cast<size_t>(j)]];
  if (batch.mask.defined()) {
    out.mask = Tensor::zeros({B, 1, m});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t j = 0; j < m; ++j)
        out.mask.ptr()[b * m + j] = batch.mask.ptr()[b * T + kept[static_cast<size_t>(j)]];
  }
  out.targets = batch.targets;
  if (!batch.classes.empty()) {
    out.classes.reserve(static_cast<size_t>(B * m));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t j = 0; j < m; ++j)
        out.classes.push_back(batch.classes[static_cast<size_t>(b * T + kept[static_cast<size_t>(j)])]);
  }
  out.positions.reserve(static_cast<size_t>(m));
  for (int64_t j = 0; j < m; ++j) {
    const double base =
        batch.positions.empty() ? static_cast<double>(kept[static_cast<size_t>(j)])
                                : batch.positions[static_cast<size_t>(kept[static_cast<size_t>(j)])];
    out.positions.push_back(base);
  }
  out.full_length = batch.full_length > 0 ? batch.full_length : T;
  return out;
}

SequenceBatch random_drop(const SequenceBatch& batch, double p, Rng& rng,
                          const std::vector<std::vector<int64_t>>& keep) {
  if (p < 0.0 || p >= 1.0) fail(ErrorKind::config, "random_drop: probability must be in [0,1)");
  if (!batch.values.defined()) fail(ErrorKind::contract, "random_drop: empty batch");
  const int64_t B = batch.batch(), C = batch.channels(), T = batch.length();
  if (!keep.empty() && static_cast<int64_t>(keep.size()) != B)
    fail(ErrorKind::contract, "random_drop: keep lists must match the batch size");

  SequenceBatch out;
  out.values = Tensor::zeros({B, C, T});
  out.mask = Tensor::zeros({B, 1, T});
  out.targets = batch.targets;
  out.classes = batch.classes;
  out.positions = batch.positions;
  out.full_length = batch.full_length > 0 ? batch.full_length : T;

  std::vector<char> observed(static_cast<size_t>(T));
  for (int64_t b = 0; b < B; ++b) {
    int64_t count = 0;
    for (int64_t t = 0; t < T; ++t) {
      observed[static_cast<size_t>(t)] = rng.uniform() >= p ? 1 : 0;
      count += observed[static_cast<size_t>(t)];
    }
    if (!keep.empty())
      for (int64_t idx : keep[static_cast<size_t>(b)]) {
        if (idx < 0 || idx >= T) fail(ErrorKind::contract, "random_drop: keep index out of range");
        count += observed[static_cast<size_t>(idx)] ? 0 : 1;
        observed[static_cast<size_t>(idx)] = 1;
      }
    if (count == 0) observed[0] = 1;  // never hand the model an empty sequence
    for (int64_t t = 0; t < T; ++t) {
      if (!observed[static_cast<size_t>(t)]) continue;
      out.mask.ptr()[b * T + t] = 1.0;
      for (int64_t c = 0; c < C; ++c)
        out.values.ptr()[(b * C + c) * T + t] = batch.values.ptr()[(b * C + c) * T + t];
    }
  }
  return out;
}

Tensor drop_density(const Tensor& mask) {
  if (mask.rank() != 3 || mask.dim(1) != 1) fail(ErrorKind::dimension, "drop_density: expects mask:[B,1,T]");
  const int64_t B = mask.dim(0), T = mask.dim(2);
  Tensor out = Tensor::zeros({B, 1, T});
  std::vector<double> pos;
  std::vector<int64_t> idx;
  for (int64_t b = 0; b < B; ++b) {
    pos.clear();
    idx.clear();
    for (int64_t t = 0; t < T; ++t)
      if (mask.ptr()[b * T + t] != 0.0) {
        pos.push_back(static_cast<double>(t));
        idx.push_back(t);
      }
    if (pos.empty()) fail(ErrorKind::data, "drop_density: sample " + std::to_string(b) + " has no observed steps");
    const std::vector<double> w = gap_density(pos);
    for (size_t i = 0; i < idx.size(); ++i) out.ptr()[b * T + idx[i]] = w[i];
  }
  return out;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_double(const std::string& cell, int64_t line_no, const char* what) {
  try {
    size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::data,
         "csv line " + std::to_string(line_no) + ": cannot parse " + what + " '" + cell + "'");
  }
}

}  // namespace

void save_csv(const std::string& path, const SequenceBatch& batch) {
  if (!batch.values.defined()) fail(ErrorKind::contract, "save_csv: empty batch");
  std::ofstream out(path);
  if (!out) fail(ErrorKind::data, "save_csv: cannot open '" + path + "' for writing");
  const int64_t B = batch.batch(), C = batch.channels(), T = batch.length();

  out << "seq,t";
  for (int64_t c = 0; c < C; ++c) out << ",x" << c;
  out << ",mask,label\n";
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t) {
      const bool observed = !batch.mask.defined() || batch.mask.ptr()[b * T + t] != 0.0;
      const double pos = batch.positions.empty() ? static_cast<double>(t)
                                                 : batch.positions[static_cast<size_t>(t)];
      out << b << ',' << fmt17(pos);
      for (int64_t c = 0; c < C; ++c) {
        out << ',';
        if (observed) out << fmt17(batch.values.ptr()[(b * C + c) * T + t]);
      }
      out << ',' << (observed ? 1 : 0) << ',';
      if (!batch.classes.empty())
        out << batch.classes[static_cast<size_t>(b * T + t)];
      else if (batch.targets.defined())
        out << fmt17(batch.targets.ptr()[b]);
      out << '\n';
    }
  if (!out) fail(ErrorKind::data, "save_csv: write to '" + path + "' failed");
}

SequenceBatch load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "load_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::data, "load_csv: '" + path + "' is empty");
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "seq" || header[1] != "t")
    fail(ErrorKind::data, "csv line 1: expected header seq,t,x0,...,mask,label");
  int64_t C = 0;
  for (size_t i = 2; i < header.size() && header[i] == "x" + std::to_string(i - 2); ++i) ++C;
  if (C == 0 || header.size() != static_cast<size_t>(C) + 4 || header[static_cast<size_t>(C) + 2] != "mask" ||
      header[static_cast<size_t>(C) + 3] != "label")
    fail(ErrorKind::data, "csv line 1: expected header seq,t,x0,...,mask,label");

  struct Row {
    double pos;
    std::vector<double> x;
    bool observed;
    std::string label;
    int64_t line_no;
  };
  std::vector<std::vector<Row>> seqs;
  int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      fail(ErrorKind::data, "csv line " + std::to_string(line_no) + ": expected " +
                                std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    const double seq_d = parse_double(cells[0], line_no, "sequence index");
    const int64_t seq = static_cast<int64_t>(seq_d);
    if (seq < 0 || static_cast<double>(seq) != seq_d)
      fail(ErrorKind::data, "csv line " + std::to_string(line_no) + ": bad sequence index '" + cells[0] + "'");
    if (seq > static_cast<int64_t>(seqs.size()))
      fail(ErrorKind::data, "csv line " + std::to_string(line_no) + ": sequence indices must be contiguous");
    if (seq == static_cast<int64_t>(seqs.size())) seqs.emplace_back();

    Row row;
    row.pos = parse_double(cells[1], line_no, "position");
    row.observed = true;
    bool any_empty = false, all_empty = true;
    for (int64_t c = 0; c < C; ++c) {
      const std::string& cell = cells[static_cast<size_t>(2 + c)];
      if (cell.empty()) {
        any_empty = true;
        row.x.push_back(0.0);
      } else {
        all_empty = false;
        row.x.push_back(parse_double(cell, line_no, "value"));
      }
    }
    if (any_empty && !all_empty)
      fail(ErrorKind::data, "csv line " + std::to_string(line_no) + ": partially empty value cells");
    const std::string& mask_cell = cells[static_cast<size_t>(2 + C)];
    if (mask_cell == "0") {
      row.observed = false;
    } else if (mask_cell == "1") {
      if (any_empty)
        fail(ErrorKind::data,
             "csv line " + std::to_string(line_no) + ": empty value cell on an observed step");
      row.observed = true;
    } else {
      fail(ErrorKind::data, "csv line " + std::to_string(line_no) + ": mask must be 0 or 1");
    }
    row.label = cells[static_cast<size_t>(3 + C)];
    row.line_no = line_no;
    seqs[static_cast<size_t>(seq)].push_back(row);
  }
  if (seqs.empty()) fail(ErrorKind::data, "load_csv: '" + path + "' holds no data rows");
  const size_t T = seqs[0].size();
  for (size_t b = 1; b < seqs.size(); ++b)
    if (seqs[b].size() != T)
      fail(ErrorKind::data, "load_csv: sequence " + std::to_string(b) + " has " +
                                std::to_string(seqs[b].size()) + " rows, sequence 0 has " + std::to_string(T));

  const int64_t B = static_cast<int64_t>(seqs.size());
  SequenceBatch out;
  out.values = Tensor::zeros({B, C, static_cast<int64_t>(T)});
  bool any_unobserved = false;
  for (const auto& rows : seqs)
    for (const Row& r : rows) any_unobserved = any_unobserved || !r.observed;
  if (any_unobserved) out.mask = Tensor::zeros({B, 1, static_cast<int64_t>(T)});

  for (int64_t b = 0; b < B; ++b)
    for (size_t t = 0; t < T; ++t) {
      const Row& r = seqs[static_cast<size_t>(b)][t];
      for (int64_t c = 0; c < C; ++c)
        out.values.ptr()[(b * C + c) * static_cast<int64_t>(T) + static_cast<int64_t>(t)] =
            r.x[static_cast<size_t>(c)];
      if (out.mask.defined())
        out.mask.ptr()[b * static_cast<int64_t>(T) + static_cast<int64_t>(t)] = r.observed ? 1.0 : 0.0;
    }

  out.positions.reserve(T);
  for (size_t t = 0; t < T; ++t) out.positions.push_back(seqs[0][t].pos);
  for (int64_t b = 1; b < B; ++b)
    for (size_t t = 0; t < T; ++t)
      if (seqs[static_cast<size_t>(b)][t].pos != out.positions[t])
        fail(ErrorKind::data, "load_csv: sequences disagree on step positions");
  bool dense_unit = true;
  for (size_t t = 0; t < T; ++t) dense_unit = dense_unit && out.positions[t] == static_cast<double>(t);
  if (dense_unit) out.positions.clear();
  out.full_length = out.positions.empty()
                        ? static_cast<int64_t>(T)
                        : static_cast<int64_t>(std::llround(out.positions.back())) + 1;

  // Labels: constant per sequence -> scalar targets, varying integers -> classes.
  bool any_label = false;
  for (const auto& rows : seqs)
    for (const Row& r : rows) any_label = any_label || !r.label.empty();
  if (any_label) {
    bool constant = true;
    for (const auto& rows : seqs)
      for (const Row& r : rows) constant = constant && r.label == rows[0].label;
    if (constant) {
      out.targets = Tensor::zeros({B, 1});
      for (int64_t b = 0; b < B; ++b) {
        const Row& r = seqs[static_cast<size_t>(b)][0];
        out.targets.ptr()[b] = parse_double(r.label, r.line_no, "label");
      }
    } else {
      out.classes.reserve(static_cast<size_t>(B) * T);
      for (const auto& rows : seqs)
        for (const Row& r : rows) {
          const double v = parse_double(r.label, r.line_no, "label");
          const int64_t cls = static_cast<int64_t>(v);
          if (static_cast<double>(cls) != v || cls < 0)
            fail(ErrorKind::data, "csv line " + std::to_string(r.line_no) +
                                      ": per-step labels must be non-negative integers");
          out.classes.push_back(cls);
        }
    }
  }
  return out;
}

}  // namespace ckconv
