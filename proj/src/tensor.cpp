#include "dreid/tensor.hpp"

#include <atomic>
#include <cmath>
#include <utility>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dreid/common.hpp"

namespace dreid {

namespace {

// Training allocates and frees multi-megabyte activation buffers every step;
// with default glibc settings those pages bounce back to the kernel and every
// step pays the page faults again. Keeping large blocks in the heap makes the
// workload allocation-stable after the first step.
struct MallocTuning {
  MallocTuning() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  }
};
const MallocTuning g_malloc_tuning;

}  // namespace

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(data))) {
  std::int64_t n = 1;
  for (int e : shape_) {
    require(e >= 1, "tensor: shape extent " + std::to_string(e) + " must be >= 1");
    n *= e;
  }
  require(static_cast<std::int64_t>(data_->size()) == n,
          "tensor: data length " + std::to_string(data_->size()) + " does not match shape " +
              shape_str(shape_));
}

Tensor Tensor::zeros(std::vector<int> shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(std::vector<int> shape, double v) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v));
}

std::int64_t Tensor::size() const {
  std::int64_t n = 1;
  for (int e : shape_) n *= e;
  return n;
}

double Tensor::value() const {
  require(size() == 1, "tensor: value() requires a scalar, got shape " + shape_str(shape_));
  return (*data_)[0];
}

const std::vector<double>& Tensor::grad() const {
  require(grad_ != nullptr, "tensor: no gradient recorded (was it watched before backward?)");
  return *grad_;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
std::atomic<std::uint64_t> g_tape_counter{0};
}  // namespace

Tape::Tape() : id_(++g_tape_counter) {}

void Tape::watch(Tensor& t) {
  require(t.data_ != nullptr, "tape: cannot watch an empty tensor");
  if (!t.grad_) t.grad_ = std::make_shared<std::vector<double>>();
  t.node_ = static_cast<int>(nodes_.size());
  t.owner_tape_ = id_;
  nodes_.push_back(Node{"leaf", t, {}, nullptr, true});
}

Tensor Tape::record(const char* tag, Tensor value, std::vector<int> inputs, BackwardFn backward) {
  int id = static_cast<int>(nodes_.size());
  for (int in : inputs)
    require(in < id, std::string("tape: op '") + tag + "' references a non-prior node");
  value.node_ = id;
  value.owner_tape_ = id_;
  nodes_.push_back(Node{tag, value, std::move(inputs), std::move(backward), false});
  return value;
}

std::vector<double>& Tape::grad_buffer(int node_id) {
  auto& g = grads_[static_cast<std::size_t>(node_id)];
  if (g.empty()) g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node_id)].value.size()), 0.0);
  return g;
}

void Tape::backward(const Tensor& loss) {
  require(loss.size() == 1, "tape: backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  require(node_of(loss) >= 0 && loss.node_ < static_cast<int>(nodes_.size()),
          "tape: loss was not produced on this record");

  grads_.assign(nodes_.size(), {});
  grad_buffer(loss.node_)[0] = 1.0;

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (node.leaf) {
      if (g.empty()) g.assign(static_cast<std::size_t>(node.value.size()), 0.0);
      *node.value.grad_ = g;
      continue;
    }
    if (g.empty() || !node.backward) continue;
    node.backward(*this, g);
  }
}

namespace ops {

namespace {

Tensor unary_pointwise(Tape& tape, const char* tag, const Tensor& x,
                       double (*f)(double), double (*df)(double, double)) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  Tensor y(x.shape(), std::move(out));
  int xid = tape.node_of(x);
  if (xid < 0) return tape.record(tag, std::move(y), {}, nullptr);
  Tensor saved_x = x;
  Tensor saved_y = y;
  return tape.record(tag, std::move(y), {xid},
                     [xid, saved_x, saved_y, df](Tape& tp, const std::vector<double>& g) {
                       auto& gx = tp.grad_buffer(xid);
                       const auto& xd = saved_x.data();
                       const auto& yd = saved_y.data();
                       for (std::size_t i = 0; i < gx.size(); ++i)
                         gx[i] += g[i] * df(xd[i], yd[i]);
                     });
}

double relu_f(double v) { return v > 0.0 ? v : 0.0; }
double relu_df(double x, double) { return x > 0.0 ? 1.0 : 0.0; }
double sigmoid_f(double v) { return 1.0 / (1.0 + std::exp(-v)); }
double sigmoid_df(double, double y) { return y * (1.0 - y); }

void check_4d(const Tensor& x, const char* op) {
  require(x.ndim() == 4, std::string(op) + ": expected a [N,C,H,W] tensor, got shape " +
                             shape_str(x.shape()));
}

}  // namespace

Tensor relu(Tape& tape, const Tensor& x) { return unary_pointwise(tape, "relu", x, relu_f, relu_df); }

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary_pointwise(tape, "sigmoid", x, sigmoid_f, sigmoid_df);
}

Tensor activation(Tape& tape, ActKind kind, const Tensor& x) {
  return kind == ActKind::kRelu ? relu(tape, x) : sigmoid(tape, x);
}

namespace {

// Order-invariant plane mean: each value is quantized to a 2^-70 grid
// (exact per element) and summed in 128-bit integer arithmetic, so any
// permutation of the positions yields the bit-identical mean. Quantization
// error is ~1e-21 per element. Values of absurd magnitude fall back to a
// serial sum.
double plane_mean(const double* plane, int hw) {
  constexpr double kBound = 1099511627776.0;  // 2^40
  constexpr double kScale = 0x1p70;           // power-of-two scaling is exact
  __int128 acc = 0;
  for (int p = 0; p < hw; ++p) {
    double v = plane[p];
    if (!(v > -kBound && v < kBound)) {
      double s = 0.0;
      for (int q = 0; q < hw; ++q) s += plane[q];
      return s / hw;
    }
    acc += static_cast<__int128>(v * kScale);
  }
  return static_cast<double>(acc) * 0x1p-70 / hw;
}

}  // namespace

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  check_4d(x, "global_avg_pool");
  int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  const double* xd = x.ptr();
  for (int i = 0; i < n * c; ++i)
    out[static_cast<std::size_t>(i)] = plane_mean(xd + static_cast<std::size_t>(i) * hw, hw);
  Tensor y({n, c}, std::move(out));
  int xid = tape.node_of(x);
  if (xid < 0) return tape.record("global_avg_pool", std::move(y), {}, nullptr);
  return tape.record("global_avg_pool", std::move(y), {xid},
                     [xid, n, c, hw](Tape& tp, const std::vector<double>& g) {
                       auto& gx = tp.grad_buffer(xid);
                       for (int i = 0; i < n * c; ++i) {
                         double gi = g[static_cast<std::size_t>(i)] / hw;
                         double* plane = gx.data() + static_cast<std::size_t>(i) * hw;
                         for (int p = 0; p < hw; ++p) plane[p] += gi;
                       }
                     });
}

Tensor global_max_pool(Tape& tape, const Tensor& x) {
  check_4d(x, "global_max_pool");
  int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  std::vector<int> argmax(out.size());
  const double* xd = x.ptr();
  for (int i = 0; i < n * c; ++i) {
    const double* plane = xd + static_cast<std::size_t>(i) * hw;
    int best = 0;
    for (int p = 1; p < hw; ++p)
      if (plane[p] > plane[best]) best = p;  // strict: ties keep the first position
    out[static_cast<std::size_t>(i)] = plane[best];
    argmax[static_cast<std::size_t>(i)] = best;
  }
  Tensor y({n, c}, std::move(out));
  int xid = tape.node_of(x);
  if (xid < 0) return tape.record("global_max_pool", std::move(y), {}, nullptr);
  return tape.record("global_max_pool", std::move(y), {xid},
                     [xid, n, c, hw, argmax](Tape& tp, const std::vector<double>& g) {
                       auto& gx = tp.grad_buffer(xid);
                       for (int i = 0; i < n * c; ++i)
                         gx[static_cast<std::size_t>(i) * hw + argmax[static_cast<std::size_t>(i)]] +=
                             g[static_cast<std::size_t>(i)];
                     });
}

Tensor conv1d_channels(Tape& tape, const Tensor& v, const Tensor& kernel) {
  require(v.ndim() == 1 || v.ndim() == 2,
          "conv1d_channels: expected [C] or [N,C] input, got shape " + shape_str(v.shape()));
  require(kernel.ndim() == 1, "conv1d_channels: kernel must be 1-D, got shape " + shape_str(kernel.shape()));
  int k = kernel.dim(0);
  require(k % 2 == 1, "conv1d_channels: kernel length " + std::to_string(k) +
                          " must be odd for same-length output");
  int n = v.ndim() == 2 ? v.dim(0) : 1;
  int c = v.ndim() == 2 ? v.dim(1) : v.dim(0);
  int half = k / 2;

  const double* vd = v.ptr();
  const double* kd = kernel.ptr();
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  for (int r = 0; r < n; ++r) {
    const double* row = vd + static_cast<std::size_t>(r) * c;
    double* orow = out.data() + static_cast<std::size_t>(r) * c;
    for (int i = 0; i < c; ++i) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) {
        int src = i + j - half;
        if (src >= 0 && src < c) s += kd[j] * row[src];
      }
      orow[i] = s;
    }
  }
  Tensor y(v.shape(), std::move(out));
  int vid = tape.node_of(v), kid = tape.node_of(kernel);
  if (vid < 0 && kid < 0) return tape.record("conv1d_channels", std::move(y), {}, nullptr);
  Tensor sv = v, sk = kernel;
  std::vector<int> ins;
  if (vid >= 0) ins.push_back(vid);
  if (kid >= 0) ins.push_back(kid);
  return tape.record("conv1d_channels", std::move(y), std::move(ins),
                     [vid, kid, sv, sk, n, c, k, half](Tape& tp, const std::vector<double>& g) {
                       const double* vd = sv.ptr();
                       const double* kd = sk.ptr();
                       for (int r = 0; r < n; ++r) {
                         const double* grow = g.data() + static_cast<std::size_t>(r) * c;
                         for (int i = 0; i < c; ++i) {
                           for (int j = 0; j < k; ++j) {
                             int src = i + j - half;
                             if (src < 0 || src >= c) continue;
                             if (vid >= 0)
                               tp.grad_buffer(vid)[static_cast<std::size_t>(r) * c + src] += kd[j] * grow[i];
                             if (kid >= 0)
                               tp.grad_buffer(kid)[static_cast<std::size_t>(j)] +=
                                   vd[static_cast<std::size_t>(r) * c + src] * grow[i];
                           }
                         }
                       }
                     });
}

namespace {

// Broadcast classes accepted by elementwise ops.
enum class Bcast { kSame, kChannelOverSpatial };

Bcast check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Bcast::kSame;
  if (a.ndim() == 4 && b.ndim() == 2 && a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1))
    return Bcast::kChannelOverSpatial;
  throw ValidationError(std::string(op) + ": shape " + shape_str(b.shape()) +
                        " is not broadcastable to " + shape_str(a.shape()));
}

}  // namespace

namespace {

// Visits every output element as (flat index, matching b index) without a
// per-element division.
template <typename Fn>
void for_broadcast(std::size_t total, std::size_t hw, Fn&& fn) {
  if (hw == 1) {
    for (std::size_t i = 0; i < total; ++i) fn(i, i);
  } else {
    std::size_t i = 0;
    for (std::size_t bi = 0; bi < total / hw; ++bi)
      for (std::size_t p = 0; p < hw; ++p, ++i) fn(i, bi);
  }
}

}  // namespace

Tensor elementwise(Tape& tape, EwKind kind, const Tensor& a, const Tensor& b) {
  const char* tag = kind == EwKind::kAdd ? "add" : kind == EwKind::kSub ? "sub" : "mul";
  Bcast bc = check_broadcast(a, b, tag);
  std::size_t hw =
      bc == Bcast::kChannelOverSpatial ? static_cast<std::size_t>(a.dim(2)) * a.dim(3) : 1;
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(ad.size());
  switch (kind) {
    case EwKind::kAdd:
      for_broadcast(ad.size(), hw, [&](std::size_t i, std::size_t bi) { out[i] = ad[i] + bd[bi]; });
      break;
    case EwKind::kSub:
      for_broadcast(ad.size(), hw, [&](std::size_t i, std::size_t bi) { out[i] = ad[i] - bd[bi]; });
      break;
    case EwKind::kMul:
      for_broadcast(ad.size(), hw, [&](std::size_t i, std::size_t bi) { out[i] = ad[i] * bd[bi]; });
      break;
  }
  Tensor y(a.shape(), std::move(out));
  int aid = tape.node_of(a), bid = tape.node_of(b);
  if (aid < 0 && bid < 0) return tape.record(tag, std::move(y), {}, nullptr);
  Tensor sa = a, sb = b;
  std::vector<int> ins;
  if (aid >= 0) ins.push_back(aid);
  if (bid >= 0) ins.push_back(bid);
  return tape.record(tag, std::move(y), std::move(ins),
                     [kind, aid, bid, sa, sb, hw](Tape& tp, const std::vector<double>& g) {
                       const auto& ad = sa.data();
                       const auto& bd = sb.data();
                       if (aid >= 0) {
                         auto& ga = tp.grad_buffer(aid);
                         if (kind == EwKind::kMul)
                           for_broadcast(g.size(), hw,
                                         [&](std::size_t i, std::size_t bi) { ga[i] += g[i] * bd[bi]; });
                         else
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (bid >= 0) {
                         auto& gb = tp.grad_buffer(bid);
                         if (kind == EwKind::kAdd)
                           for_broadcast(g.size(), hw,
                                         [&](std::size_t i, std::size_t bi) { gb[bi] += g[i]; });
                         else if (kind == EwKind::kSub)
                           for_broadcast(g.size(), hw,
                                         [&](std::size_t i, std::size_t bi) { gb[bi] -= g[i]; });
                         else
                           for_broadcast(g.size(), hw, [&](std::size_t i, std::size_t bi) {
                             gb[bi] += g[i] * ad[i];
                           });
                       }
                     });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) { return elementwise(tape, EwKind::kAdd, a, b); }
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) { return elementwise(tape, EwKind::kSub, a, b); }
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) { return elementwise(tape, EwKind::kMul, a, b); }

Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y({1}, {s});
  int xid = tape.node_of(x);
  if (xid < 0) return tape.record("sum", std::move(y), {}, nullptr);
  return tape.record("sum", std::move(y), {xid}, [xid](Tape& tp, const std::vector<double>& g) {
    auto& gx = tp.grad_buffer(xid);
    for (double& v : gx) v += g[0];
  });
}

Tensor scale(Tape& tape, const Tensor& x, double c) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = c * xd[i];
  Tensor y(x.shape(), std::move(out));
  int xid = tape.node_of(x);
  if (xid < 0) return tape.record("scale", std::move(y), {}, nullptr);
  return tape.record("scale", std::move(y), {xid}, [xid, c](Tape& tp, const std::vector<double>& g) {
    auto& gx = tp.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * g[i];
  });
}

}  // namespace ops

GradCheckReport grad_check(const std::function<Tensor(Tape&, std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double eps, bool skip_kinks) {
  GradCheckReport report;

  Tape tape;
  for (auto& t : inputs) tape.watch(t);
  Tensor loss = f(tape, inputs);
  require(loss.size() == 1, "grad_check: f must produce a scalar");
  if (!std::isfinite(loss.value())) return {0.0, false, 0, 0};
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) {
    analytic.push_back(t.grad());
    for (double v : t.grad())
      if (!std::isfinite(v)) return {0.0, false, 0, 0};
  }

  bool bad = false;
  auto eval = [&](std::vector<Tensor>& probe) {
    Tape t;
    double v = f(t, probe).value();
    if (!std::isfinite(v)) bad = true;
    return v;
  };
  double f0 = skip_kinks ? eval(inputs) : 0.0;

  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& data = inputs[ti].data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      ++report.entries;
      double keep = data[j];
      data[j] = keep + eps;
      double up = eval(inputs);
      data[j] = keep - eps;
      double down = eval(inputs);
      data[j] = keep;
      if (bad) return {0.0, false, 0, 0};
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic[ti][j];
      double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (skip_kinks && rel > 1e-5) {
        // At a kink the one-sided slopes disagree and the analytic
        // subgradient coincides with one of them; a smooth function with a
        // wrong analytic gradient keeps the sides equal to O(eps) and
        // matches neither.
        double right = (up - f0) / eps;
        double left = (f0 - down) / eps;
        double split = std::abs(right - left) / std::max(1e-8, std::abs(right) + std::abs(left));
        double side_match =
            std::min(std::abs(a - left) / std::max(1e-8, std::abs(a) + std::abs(left)),
                     std::abs(a - right) / std::max(1e-8, std::abs(a) + std::abs(right)));
        if (split > 0.02 || side_match < 1e-4) {
          ++report.kink_skipped;
          continue;
        }
      }
      if (rel > report.max_rel_err) report.max_rel_err = rel;
    }
  }
  return report;
}

}  // namespace dreid
