#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dreid {

class Tape;

// Dense row-major tensor of 64-bit floats. Copies share the underlying
// buffer; values are treated as immutable once an op has produced them.
// Training code mutates parameter buffers only between recorded steps.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const;

  std::vector<double>& data() { return *data_; }
  const std::vector<double>& data() const { return *data_; }
  double* ptr() { return data_->data(); }
  const double* ptr() const { return data_->data(); }

  double value() const;  // scalar tensors only

  double& at(int i) { return (*data_)[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return (*data_)[static_cast<std::size_t>(i) * dim(1) + j]; }
  double& at(int i, int j, int k, int l) {
    return (*data_)[((static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }
  double at(int i) const { return (*data_)[static_cast<std::size_t>(i)]; }
  double at(int i, int j) const { return (*data_)[static_cast<std::size_t>(i) * dim(1) + j]; }
  double at(int i, int j, int k, int l) const {
    return (*data_)[((static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }

  // Gradient of the last backward() pass through a tape that watched this
  // tensor. Same length as data; zeros when the leaf did not reach the loss.
  bool has_grad() const { return grad_ != nullptr; }
  const std::vector<double>& grad() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  friend class Tape;

  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  int node_ = -1;
  std::uint64_t owner_tape_ = 0;  // tape instance id; stale tensors act as constants
};

std::string shape_str(const std::vector<int>& shape);

// Append-only record of one forward computation. Node ids are assigned in
// execution order, so input ids always precede the node that consumes them
// and a single reverse sweep is a valid topological backward order.
class Tape {
 public:
  Tape();

  // fn(tape, out_grad) accumulates into grad_buffer(input_id) for each
  // differentiable input. Non-recorded inputs carry node id -1 and must be
  // skipped by the closure.
  using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

  // Registers t as a differentiable leaf. backward() writes its gradient
  // into t.grad().
  void watch(Tensor& t);

  // Records an op result and returns it with its node id attached.
  Tensor record(const char* tag, Tensor value, std::vector<int> inputs, BackwardFn backward);

  // Reverse-mode sweep from a scalar loss produced on this tape. Visits
  // every node exactly once in reverse id order; repeated calls recompute
  // from scratch and give bitwise-identical results.
  void backward(const Tensor& loss);

  // Accumulation target for BackwardFn closures; valid during backward().
  std::vector<double>& grad_buffer(int node_id);

  // Node id of t on THIS tape, or -1 when t was produced elsewhere (then it
  // participates as a constant).
  int node_of(const Tensor& t) const { return t.owner_tape_ == id_ ? t.node_ : -1; }

  std::size_t node_count() const { return nodes_.size(); }
  const Tensor& node_value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const char* node_tag(int id) const { return nodes_[static_cast<std::size_t>(id)].tag; }
  const std::vector<int>& node_inputs(int id) const {
    return nodes_[static_cast<std::size_t>(id)].inputs;
  }

 private:
  struct Node {
    const char* tag;
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    bool leaf = false;
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

enum class ActKind { kRelu, kSigmoid };
enum class EwKind { kAdd, kSub, kMul };

namespace ops {

// 2-D cross-correlation with per-output-channel bias.
// x: [N,C,H,W], w: [Co,C,kh,kw], b: [Co]. Output [N,Co,H',W'] where the
// padded extent minus kernel must divide the stride exactly.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// Same-length 1-D cross-correlation over the channel axis, zero padded.
// v: [C] or [N,C] (rows independent), kernel: [k] with k odd.
Tensor conv1d_channels(Tape& tape, const Tensor& v, const Tensor& kernel);

Tensor global_avg_pool(Tape& tape, const Tensor& x);  // [N,C,H,W] -> [N,C]
// Subgradient routes to the first maximal element in row-major order.
Tensor global_max_pool(Tape& tape, const Tensor& x);  // [N,C,H,W] -> [N,C]

Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor activation(Tape& tape, ActKind kind, const Tensor& x);

// Shapes must be equal, or b of shape [N,C] broadcasting over a [N,C,H,W].
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor elementwise(Tape& tape, EwKind kind, const Tensor& a, const Tensor& b);

// x: [N,D], w: [K,D], b: [K] -> [N,K].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);

Tensor sum(Tape& tape, const Tensor& x);            // -> scalar
Tensor scale(Tape& tape, const Tensor& x, double c);

}  // namespace ops

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool finite = true;    // false if any value or gradient was non-finite
  int kink_skipped = 0;  // entries excluded by the kink detector
  std::int64_t entries = 0;
};

// Central finite differences against recorded gradients. f builds a scalar
// from the given leaves on the supplied tape; rel error per entry is
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
//
// With skip_kinks set, entries whose probe straddles a non-smooth point
// (relu kink, max-pool winner flip) are excluded: such an entry shows a
// numeric estimate that changes with the step size, while a genuine gradient
// bug gives a stable numeric that simply disagrees with the analytic value.
GradCheckReport grad_check(const std::function<Tensor(Tape&, std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double eps, bool skip_kinks = false);

}  // namespace dreid
