#include <Eigen/Dense>

#include <cstring>
#include <memory>

#include "dreid/common.hpp"
#include "dreid/parallel.hpp"
#include "dreid/tensor.hpp"

namespace dreid {
namespace ops {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvDims {
  int n, c, h, w, co, kh, kw, oh, ow;
  int ckk() const { return c * kh * kw; }
  int ohw() const { return oh * ow; }
  std::int64_t cols() const { return static_cast<std::int64_t>(n) * ohw(); }
};

int out_extent(int in, int pad, int k, int stride, const char* dim_name) {
  int span = in + 2 * pad - k;
  require(span >= 0, std::string("conv2d: kernel does not fit padded input along ") + dim_name +
                         " (" + std::to_string(in) + "+2*" + std::to_string(pad) + " < " +
                         std::to_string(k) + ")");
  require(span % stride == 0, std::string("conv2d: (") + dim_name + "+2*pad-k)=" +
                                  std::to_string(span) + " is not divisible by stride " +
                                  std::to_string(stride) + " along " + dim_name);
  return span / stride + 1;
}

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  require(x.ndim() == 4, "conv2d: input must be [N,C,H,W], got shape " + shape_str(x.shape()));
  require(w.ndim() == 4, "conv2d: kernel must be [Co,C,kh,kw], got shape " + shape_str(w.shape()));
  require(b.ndim() == 1, "conv2d: bias must be [Co], got shape " + shape_str(b.shape()));
  require(stride >= 1, "conv2d: stride must be positive");
  require(pad >= 0, "conv2d: pad must be non-negative");
  require(x.dim(1) == w.dim(1), "conv2d: input channels C=" + std::to_string(x.dim(1)) +
                                    " do not match kernel channels C=" + std::to_string(w.dim(1)));
  require(b.dim(0) == w.dim(0), "conv2d: bias extent " + std::to_string(b.dim(0)) +
                                    " does not match output channels Co=" + std::to_string(w.dim(0)));
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0};
  d.oh = out_extent(d.h, pad, d.kh, stride, "H");
  d.ow = out_extent(d.w, pad, d.kw, stride, "W");
  return d;
}

// Valid output range [lo, hi) along one axis for a given kernel offset:
// 0 <= o*stride - pad + k < extent. Guard the negative numerator: C++
// division truncates toward zero, not floor.
void valid_span(int out_extent, int in_extent, int stride, int pad, int k, int& lo, int& hi) {
  int num = pad - k;
  lo = num > 0 ? (num + stride - 1) / stride : 0;
  int top = in_extent - 1 + pad - k;
  hi = top < 0 ? 0 : std::min(out_extent, top / stride + 1);
  if (hi < lo) hi = lo;
}

// Writes image n's patch matrix into its column block of the batched column
// matrix: row (c,ki,kj), column n*ohw + (oy,ox); the row stride is the full
// batch width so one GEMM covers the whole batch. Edge zeros are memset and
// interiors copied in branch-free runs.
void im2col(const double* x, const ConvDims& d, int stride, int pad, double* col, std::int64_t row_stride) {
  for (int c = 0; c < d.c; ++c) {
    const double* plane = x + static_cast<std::size_t>(c) * d.h * d.w;
    for (int ki = 0; ki < d.kh; ++ki) {
      int ylo, yhi;
      valid_span(d.oh, d.h, stride, pad, ki, ylo, yhi);
      for (int kj = 0; kj < d.kw; ++kj) {
        int xlo, xhi;
        valid_span(d.ow, d.w, stride, pad, kj, xlo, xhi);
        double* row = col + (static_cast<std::size_t>(c) * d.kh * d.kw + ki * d.kw + kj) * row_stride;
        if (ylo > 0) std::memset(row, 0, static_cast<std::size_t>(ylo) * d.ow * sizeof(double));
        for (int oy = ylo; oy < yhi; ++oy) {
          int sy = oy * stride - pad + ki;
          const double* srow = plane + static_cast<std::size_t>(sy) * d.w;
          double* seg = row + static_cast<std::size_t>(oy) * d.ow;
          if (xlo > 0) std::memset(seg, 0, static_cast<std::size_t>(xlo) * sizeof(double));
          if (stride == 1) {
            std::memcpy(seg + xlo, srow + (xlo - pad + kj),
                        static_cast<std::size_t>(xhi - xlo) * sizeof(double));
          } else {
            for (int ox = xlo; ox < xhi; ++ox) seg[ox] = srow[ox * stride - pad + kj];
          }
          if (xhi < d.ow)
            std::memset(seg + xhi, 0, static_cast<std::size_t>(d.ow - xhi) * sizeof(double));
        }
        if (yhi < d.oh)
          std::memset(row + static_cast<std::size_t>(yhi) * d.ow, 0,
                      static_cast<std::size_t>(d.oh - yhi) * d.ow * sizeof(double));
      }
    }
  }
}

void col2im_accum(const double* col, const ConvDims& d, int stride, int pad, double* gx,
                  std::int64_t row_stride) {
  for (int c = 0; c < d.c; ++c) {
    double* plane = gx + static_cast<std::size_t>(c) * d.h * d.w;
    for (int ki = 0; ki < d.kh; ++ki) {
      int ylo, yhi;
      valid_span(d.oh, d.h, stride, pad, ki, ylo, yhi);
      for (int kj = 0; kj < d.kw; ++kj) {
        int xlo, xhi;
        valid_span(d.ow, d.w, stride, pad, kj, xlo, xhi);
        const double* row = col + (static_cast<std::size_t>(c) * d.kh * d.kw + ki * d.kw + kj) * row_stride;
        for (int oy = ylo; oy < yhi; ++oy) {
          int sy = oy * stride - pad + ki;
          double* drow = plane + static_cast<std::size_t>(sy) * d.w + (xlo * stride - pad + kj);
          const double* seg = row + static_cast<std::size_t>(oy) * d.ow;
          if (stride == 1) {
            for (int ox = xlo; ox < xhi; ++ox) drow[ox - xlo] += seg[ox];
          } else {
            for (int ox = xlo; ox < xhi; ++ox) drow[(ox - xlo) * stride] += seg[ox];
          }
        }
      }
    }
  }
}

// out = a * b computed over fixed 2048-column panels of b. Columns are
// independent under GEMM, the panel size is a constant, and panels are
// written disjointly, so the result does not depend on the worker count and
// every panel stays cache-resident.
template <typename A, typename B>
void gemm_col_panels(MatMap out, const A& a, const B& b) {
  constexpr Eigen::Index kPanel = 2048;
  Eigen::Index cols = out.cols();
  int panels = static_cast<int>((cols + kPanel - 1) / kPanel);
  if (panels <= 1) {
    out.noalias() = a * b;
    return;
  }
  parallel_for(panels, [&](int p) {
    Eigen::Index c0 = static_cast<Eigen::Index>(p) * kPanel;
    Eigen::Index cn = std::min(kPanel, cols - c0);
    out.middleCols(c0, cn).noalias() = a * b.middleCols(c0, cn);
  });
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  ConvDims d = conv_dims(x, w, b, stride, pad);

  // Batched im2col: one wide matrix, one GEMM for the whole batch. Scratch
  // buffers are left uninitialized; every entry is written before use.
  std::unique_ptr<double[]> cols(new double[static_cast<std::size_t>(d.ckk()) * d.cols()]);
  const double* xd = x.ptr();
  parallel_for(d.n, [&](int n) {
    im2col(xd + static_cast<std::size_t>(n) * d.c * d.h * d.w, d, stride, pad,
           cols.get() + static_cast<std::size_t>(n) * d.ohw(), d.cols());
  });

  // Sequential GEMMs keep rounding independent of the worker count; the
  // memory passes around them run parallel with disjoint writes.
  std::unique_ptr<double[]> ymat(new double[static_cast<std::size_t>(d.co) * d.cols()]);
  {
    ConstMatMap wmat(w.ptr(), d.co, d.ckk());
    ConstMatMap colall(cols.get(), d.ckk(), static_cast<Eigen::Index>(d.cols()));
    MatMap y(ymat.get(), d.co, static_cast<Eigen::Index>(d.cols()));
    gemm_col_panels(y, wmat, colall);
  }

  // Scatter [Co, N*OHW] into [N, Co, OH, OW] and add the bias.
  std::vector<double> out(static_cast<std::size_t>(d.n) * d.co * d.ohw());
  const double* bias = b.ptr();
  parallel_for(d.n, [&](int n) {
    for (int co = 0; co < d.co; ++co) {
      const double* src = ymat.get() + static_cast<std::size_t>(co) * d.cols() +
                          static_cast<std::size_t>(n) * d.ohw();
      double* dst = out.data() + (static_cast<std::size_t>(n) * d.co + co) * d.ohw();
      double bv = bias[co];
      for (int p = 0; p < d.ohw(); ++p) dst[p] = src[p] + bv;
    }
  });

  Tensor y({d.n, d.co, d.oh, d.ow}, std::move(out));
  int xid = tape.node_of(x), wid = tape.node_of(w), bid = tape.node_of(b);
  if (xid < 0 && wid < 0 && bid < 0) return tape.record("conv2d", std::move(y), {}, nullptr);
  Tensor sx = x, sw = w;
  std::vector<int> ins;
  for (int id : {xid, wid, bid})
    if (id >= 0) ins.push_back(id);

  auto backward = [xid, wid, bid, sx, sw, d, stride, pad](Tape& tp, const std::vector<double>& g) {
    // Gather output gradients into the [Co, N*OHW] layout used by the GEMMs.
    std::unique_ptr<double[]> gymat(new double[static_cast<std::size_t>(d.co) * d.cols()]);
    parallel_for(d.n, [&](int n) {
      for (int co = 0; co < d.co; ++co) {
        const double* src = g.data() + (static_cast<std::size_t>(n) * d.co + co) * d.ohw();
        double* dst = gymat.get() + static_cast<std::size_t>(co) * d.cols() +
                      static_cast<std::size_t>(n) * d.ohw();
        for (int p = 0; p < d.ohw(); ++p) dst[p] = src[p];
      }
    });
    ConstMatMap gy(gymat.get(), d.co, static_cast<Eigen::Index>(d.cols()));
    ConstMatMap wmat(sw.ptr(), d.co, d.ckk());

    std::unique_ptr<double[]> cols(new double[static_cast<std::size_t>(d.ckk()) * d.cols()]);
    parallel_for(d.n, [&](int n) {
      im2col(sx.ptr() + static_cast<std::size_t>(n) * d.c * d.h * d.w, d, stride, pad,
             cols.get() + static_cast<std::size_t>(n) * d.ohw(), d.cols());
    });

    if (xid >= 0) {
      std::unique_ptr<double[]> dcol(new double[static_cast<std::size_t>(d.ckk()) * d.cols()]);
      MatMap dcol_map(dcol.get(), d.ckk(), static_cast<Eigen::Index>(d.cols()));
      gemm_col_panels(dcol_map, wmat.transpose(), gy);
      double* gx = tp.grad_buffer(xid).data();
      parallel_for(d.n, [&](int n) {
        col2im_accum(dcol.get() + static_cast<std::size_t>(n) * d.ohw(), d, stride, pad,
                     gx + static_cast<std::size_t>(n) * d.c * d.h * d.w, d.cols());
      });
    }

    if (wid >= 0) {
      ConstMatMap colall(cols.get(), d.ckk(), static_cast<Eigen::Index>(d.cols()));
      MatMap gw(tp.grad_buffer(wid).data(), d.co, d.ckk());
      gw.noalias() += gy * colall.transpose();
    }

    if (bid >= 0) {
      auto& gb = tp.grad_buffer(bid);
      for (int co = 0; co < d.co; ++co) {
        const double* row = gymat.get() + static_cast<std::size_t>(co) * d.cols();
        double s = 0.0;
        for (std::int64_t p = 0; p < d.cols(); ++p) s += row[p];
        gb[static_cast<std::size_t>(co)] += s;
      }
    }
  };
  return tape.record("conv2d", std::move(y), std::move(ins), std::move(backward));
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.ndim() == 2, "linear: input must be [N,D], got shape " + shape_str(x.shape()));
  require(w.ndim() == 2, "linear: weight must be [K,D], got shape " + shape_str(w.shape()));
  require(b.ndim() == 1, "linear: bias must be [K], got shape " + shape_str(b.shape()));
  require(x.dim(1) == w.dim(1), "linear: inner dim D=" + std::to_string(x.dim(1)) +
                                    " does not match weight D=" + std::to_string(w.dim(1)));
  require(b.dim(0) == w.dim(0), "linear: bias extent " + std::to_string(b.dim(0)) +
                                    " does not match output dim K=" + std::to_string(w.dim(0)));
  int n = x.dim(0), dd = x.dim(1), k = w.dim(0);

  std::vector<double> out(static_cast<std::size_t>(n) * k);
  {
    ConstMatMap xm(x.ptr(), n, dd), wm(w.ptr(), k, dd);
    MatMap ym(out.data(), n, k);
    ym.noalias() = xm * wm.transpose();
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(r) * k + j] += b.ptr()[j];
  }
  Tensor y({n, k}, std::move(out));
  int xid = tape.node_of(x), wid = tape.node_of(w), bid = tape.node_of(b);
  if (xid < 0 && wid < 0 && bid < 0) return tape.record("linear", std::move(y), {}, nullptr);
  Tensor sx = x, sw = w;
  std::vector<int> ins;
  for (int id : {xid, wid, bid})
    if (id >= 0) ins.push_back(id);
  return tape.record("linear", std::move(y), std::move(ins),
                     [xid, wid, bid, sx, sw, n, dd, k](Tape& tp, const std::vector<double>& g) {
                       ConstMatMap gy(g.data(), n, k);
                       if (xid >= 0) {
                         ConstMatMap wm(sw.ptr(), k, dd);
                         MatMap gx(tp.grad_buffer(xid).data(), n, dd);
                         gx.noalias() += gy * wm;
                       }
                       if (wid >= 0) {
                         ConstMatMap xm(sx.ptr(), n, dd);
                         MatMap gw(tp.grad_buffer(wid).data(), k, dd);
                         gw.noalias() += gy.transpose() * xm;
                       }
                       if (bid >= 0) {
                         auto& gb = tp.grad_buffer(bid);
                         for (int r = 0; r < n; ++r)
                           for (int j = 0; j < k; ++j) gb[static_cast<std::size_t>(j)] += gy(r, j);
                       }
                     });
}

}  // namespace ops
}  // namespace dreid
