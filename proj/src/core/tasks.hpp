#ifndef CKCONV_CORE_TASKS_HPP_
#define CKCONV_CORE_TASKS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/tensor.hpp"

namespace ckconv {

// A batch of equally long sequences plus whichever supervision the task
// defines. Exactly one of targets / classes is set for supervised batches.
struct SequenceBatch {
  Tensor values;   // [B, C, n]
  Tensor mask;     // [B, 1, n], 1 = observed; empty when fully observed
  Tensor targets;  // [B, 1] scalar regression targets; empty otherwise
  std::vector<int64_t> classes;   // per-step classes, row-major over (b, t); empty otherwise
  std::vector<double> positions;  // step positions shared by all samples; empty = 0..n-1
  int64_t full_length = 0;        // steps of the originating dense grid

  int64_t batch() const { return values.defined() ? values.dim(0) : 0; }
  int64_t channels() const { return values.defined() ? values.dim(1) : 0; }
  int64_t length() const { return values.defined() ? values.dim(2) : 0; }
};

// Recall-after-delay stress task. Sequences of length T + 20: ten digits
// drawn from {1..8}, then T - 1 zeros, then eleven 9s announcing recall. The
// per-step target is 0 everywhere except the last ten steps, which must
// reproduce the digits (classes 0..8). Input is a single integer channel, or
// ten one-hot channels on request.
SequenceBatch gen_copy_memory(int64_t T, int64_t batch, Rng& rng, bool one_hot = false);

// Marked-sum stress task over T steps and two channels: channel 0 holds
// uniform [0,1) values, channel 1 is zero except for one marker in each half
// of the sequence. The scalar target is the sum of the two marked values.
// Always answering the mean (1.0) gives an expected squared error of 1/6.
SequenceBatch gen_adding_problem(int64_t T, int64_t batch, Rng& rng);

// Named 1-d target curves on [-1, 1], length points each, for kernel-fitting
// experiments: "gaussian" (sigma 0.3, min-max rescaled to [-1, 1]), "step"
// (-1 first half, +1 second), "sawtooth" (teeth ramps), "sine" (one period),
// "random_noise" (uniform [-1, 1]). Unknown names raise a config error.
std::vector<double> make_target_curve(const std::string& kind, int64_t length, Rng& rng,
                                      int64_t teeth = 8);

// Keep every n-th step (0, n, 2n, ...), recording the surviving step
// positions so downstream consumers know where the samples sit.
SequenceBatch subsample(const SequenceBatch& batch, int64_t n);

// Independently drop each step with probability p (mask 0, value zeroed),
// keeping any step listed in keep[b]. Guarantees at least one observed step
// per sample. Dense layout: values keep their slots, the mask says which
// survived.
SequenceBatch random_drop(const SequenceBatch& batch, double p, Rng& rng,
                          const std::vector<std::vector<int64_t>>& keep = {});

// Inverse-density weights for a dense masked batch: the positions-with-gaps
// estimator applied to each sample's observed steps, zero where unobserved.
// mask:[B,1,T] -> [B,1,T].
Tensor drop_density(const Tensor& mask);

// CSV round trip with columns seq,t,x0..x{C-1},mask,label. Values print with
// %.17g so reading back is exact. Unobserved steps leave their value cells
// empty and get mask 0. The label column holds the per-step class for
// classification batches and the (repeated) scalar target for regression
// ones; loading maps constant-per-sequence labels back to scalar targets and
// varying integer labels back to classes. Malformed rows raise a data error
// naming the line.
void save_csv(const std::string& path, const SequenceBatch& batch);
SequenceBatch load_csv(const std::string& path);

}  // namespace ckconv

#endif  // CKCONV_CORE_TASKS_HPP_
