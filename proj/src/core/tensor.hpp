#ifndef CKCONV_CORE_TENSOR_HPP_
#define CKCONV_CORE_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace ckconv {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense row-major tensor of doubles. Copies are shallow: they share the value
// and gradient buffers, which is what lets tape closures observe accumulation.
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // allocated on demand
  bool requires_grad = false;

  Tensor() = default;

  // Creation rejects non-finite values.
  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(data); }
  int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  // Handle semantics: a const Tensor is a const handle to shared mutable
  // storage, so these stay usable from value-captured copies in closures.
  double* ptr() const { return data->data(); }
  double* gptr() const { return grad->data(); }

  void ensure_grad();  // allocate (zeroed) if missing
  void zero_grad();
  double scalar() const;  // value of a 1-element tensor
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Reverse-mode tape. Ops append one closure per recorded node; backward()
// replays them in reverse order. Leaf gradients accumulate across backward
// calls until zeroed; gradients of recorded intermediates are reset per pass.
class Tape {
 public:
  void record(const Tensor& out, std::function<void()> fn);
  void backward(const Tensor& loss);
  size_t size() const { return nodes_.size(); }
  void clear();

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<Tensor> outputs_;
  const void* terminal_ = nullptr;
};

// ---- ops; tape == nullptr (or no input requiring grad) means plain eval ----

// elementwise; operands must have equal shapes or one side a single element
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double s, Tape* tape = nullptr);
Tensor sine(const Tensor& a, Tape* tape = nullptr);
Tensor relu(const Tensor& a, Tape* tape = nullptr);
Tensor leaky_relu(const Tensor& a, double slope = 0.01, Tape* tape = nullptr);
Tensor swish(const Tensor& a, Tape* tape = nullptr);
// Inverted dropout: scales kept units by 1/(1-p); identity when !training.
Tensor dropout(const Tensor& a, double p, bool training, Rng& rng, Tape* tape = nullptr);

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
// y = x * w^T + b with x:[N,in], w:[out,in], b:[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr);
// Per-position channel map: x:[B,C,T], w:[O,C], b:[O] -> [B,O,T]
Tensor channel_linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr);
// w_row = g_row * v_row / ||v_row||, v:[rows,cols], g:[rows]
Tensor weight_norm(const Tensor& v, const Tensor& g, Tape* tape = nullptr);
// Normalizes across channels at each (batch, time) position; x:[B,C,T].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Tape* tape = nullptr);
// [B,C,T] -> [B,C], features at the final time step
Tensor last_step(const Tensor& x, Tape* tape = nullptr);

Tensor sum(const Tensor& a, Tape* tape = nullptr);
Tensor mean(const Tensor& a, Tape* tape = nullptr);
Tensor mse_loss(const Tensor& pred, const Tensor& target, Tape* tape = nullptr);
// logits [N,C] with targets.size()==N, or [B,C,T] with targets.size()==B*T
// (row-major over (b,t)). Mean-reduced, log-sum-exp stabilized.
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int64_t>& targets, Tape* tape = nullptr);

bool all_finite(const Tensor& t);

}  // namespace ckconv

#endif  // CKCONV_CORE_TENSOR_HPP_
