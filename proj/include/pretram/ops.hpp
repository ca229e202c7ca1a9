#pragma once

// Differentiable op set. Exactly what the encoders and objectives need:
// dense kernels with fixed serial accumulation order (bit-determinism is part
// of the contract), tape nodes wired per op, no broadcasting beyond the
// shapes the model uses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pretram/tensor.hpp"

namespace pretram {

namespace detail {

template <class Real>
Tensor<Real> op_result(const Shape& s, std::initializer_list<Tensor<Real>> parents) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad;
  Tensor<Real> out = Tensor<Real>::zeros(s, rg);
  if (rg) {
    out.node = std::make_shared<Node<Real>>();
    out.node->parents = parents;
  }
  return out;
}

// C[M,N] += A[M,K] * B[K,N], row-major
template <class Real>
void gemm_acc(const Real* __restrict__ a, const Real* __restrict__ b, Real* __restrict__ c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* ar = a + static_cast<size_t>(i) * k;
    Real* cr = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const Real aik = ar[p];
      if (aik == Real(0)) continue;
      const Real* br = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) cr[j] += aik * br[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T, row-major (row-dot form)
template <class Real>
void gemm_nt_acc(const Real* __restrict__ a, const Real* __restrict__ b, Real* __restrict__ c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* ar = a + static_cast<size_t>(i) * k;
    Real* cr = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const Real* br = b + static_cast<size_t>(j) * k;
      Real acc = Real(0);
      for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
      cr[j] += acc;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / scalar
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape != b.shape) throw ShapeError("add: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<Real> out = detail::op_result(a.shape, {a, b});
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  if (out.node)
    out.node->backward = [n](const Tensor<Real>& o) {
      for (int pi = 0; pi < 2; ++pi) {
        const Tensor<Real>& p = o.node->parents[pi];
        if (!p.requires_grad) continue;
        for (size_t i = 0; i < n; ++i) (*p.grad)[i] += (*o.grad)[i];
      }
    };
  return out;
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape != b.shape) throw ShapeError("sub: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<Real> out = detail::op_result(a.shape, {a, b});
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  if (out.node)
    out.node->backward = [n](const Tensor<Real>& o) {
      const Tensor<Real>& pa = o.node->parents[0];
      const Tensor<Real>& pb = o.node->parents[1];
      if (pa.requires_grad)
        for (size_t i = 0; i < n; ++i) (*pa.grad)[i] += (*o.grad)[i];
      if (pb.requires_grad)
        for (size_t i = 0; i < n; ++i) (*pb.grad)[i] -= (*o.grad)[i];
    };
  return out;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape != b.shape) throw ShapeError("mul: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<Real> out = detail::op_result(a.shape, {a, b});
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  if (out.node)
    out.node->backward = [n](const Tensor<Real>& o) {
      const Tensor<Real>& pa = o.node->parents[0];
      const Tensor<Real>& pb = o.node->parents[1];
      if (pa.requires_grad)
        for (size_t i = 0; i < n; ++i) (*pa.grad)[i] += (*o.grad)[i] * (*pb.data)[i];
      if (pb.requires_grad)
        for (size_t i = 0; i < n; ++i) (*pb.grad)[i] += (*o.grad)[i] * (*pa.data)[i];
    };
  return out;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
  Tensor<Real> out = detail::op_result(a.shape, {a});
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * c;
  if (out.node)
    out.node->backward = [n, c](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      for (size_t i = 0; i < n; ++i) (*p.grad)[i] += (*o.grad)[i] * c;
    };
  return out;
}

// y = x * s where s is a learned scalar (shape [1])
template <class Real>
Tensor<Real> scale_by(const Tensor<Real>& x, const Tensor<Real>& s) {
  if (s.numel() != 1) throw ShapeError("scale_by: scale must be a single element, got " + shape_str(s.shape));
  Tensor<Real> out = detail::op_result(x.shape, {x, s});
  const size_t n = out.numel();
  const Real sv = (*s.data)[0];
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * sv;
  if (out.node)
    out.node->backward = [n, sv](const Tensor<Real>& o) {
      const Tensor<Real>& px = o.node->parents[0];
      const Tensor<Real>& ps = o.node->parents[1];
      if (px.requires_grad)
        for (size_t i = 0; i < n; ++i) (*px.grad)[i] += (*o.grad)[i] * sv;
      if (ps.requires_grad) {
        Real acc = Real(0);
        for (size_t i = 0; i < n; ++i) acc += (*o.grad)[i] * (*px.data)[i];
        (*ps.grad)[0] += acc;
      }
    };
  return out;
}

template <class Real>
Tensor<Real> exp_elem(const Tensor<Real>& a) {
  Tensor<Real> out = detail::op_result(a.shape, {a});
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = std::exp((*a.data)[i]);
  if (out.node)
    out.node->backward = [n](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      for (size_t i = 0; i < n; ++i) (*p.grad)[i] += (*o.grad)[i] * (*o.data)[i];
    };
  return out;
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  Tensor<Real> out = detail::op_result(a.shape, {a});
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] > Real(0) ? (*a.data)[i] : Real(0);
  if (out.node)
    out.node->backward = [n](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      for (size_t i = 0; i < n; ++i)
        if ((*p.data)[i] > Real(0)) (*p.grad)[i] += (*o.grad)[i];
    };
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, const Shape& s) {
  if (shape_numel(s) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape) + " -> " + shape_str(s) + " changes element count");
  Tensor<Real> out = detail::op_result(s, {a});
  *out.data = *a.data;
  if (out.node)
    out.node->backward = [](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      const size_t n = o.numel();
      for (size_t i = 0; i < n; ++i) (*p.grad)[i] += (*o.grad)[i];
    };
  return out;
}

template <class Real>
Tensor<Real> flatten_rows(const Tensor<Real>& a) {
  if (a.rank() < 2) throw ShapeError("flatten_rows: need rank >= 2, got " + shape_str(a.shape));
  int rows = a.shape[0];
  int cols = static_cast<int>(a.numel() / static_cast<size_t>(rows));
  return reshape(a, {rows, cols});
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: need rank 2, got " + shape_str(a.shape));
  const int m = a.shape[0], n = a.shape[1];
  Tensor<Real> out = detail::op_result({n, m}, {a});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) (*out.data)[static_cast<size_t>(j) * m + i] = (*a.data)[static_cast<size_t>(i) * n + j];
  if (out.node)
    out.node->backward = [m, n](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          (*p.grad)[static_cast<size_t>(i) * n + j] += (*o.grad)[static_cast<size_t>(j) * m + i];
    };
  return out;
}

template <class Real>
Tensor<Real> concat_cols(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[0] != b.shape[0])
    throw ShapeError("concat_cols: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  const int n = a.shape[0], da = a.shape[1], db = b.shape[1];
  Tensor<Real> out = detail::op_result({n, da + db}, {a, b});
  for (int r = 0; r < n; ++r) {
    Real* dst = out.ptr() + static_cast<size_t>(r) * (da + db);
    std::copy_n(a.ptr() + static_cast<size_t>(r) * da, da, dst);
    std::copy_n(b.ptr() + static_cast<size_t>(r) * db, db, dst + da);
  }
  if (out.node)
    out.node->backward = [n, da, db](const Tensor<Real>& o) {
      const Tensor<Real>& pa = o.node->parents[0];
      const Tensor<Real>& pb = o.node->parents[1];
      for (int r = 0; r < n; ++r) {
        const Real* g = o.gptr() + static_cast<size_t>(r) * (da + db);
        if (pa.requires_grad)
          for (int j = 0; j < da; ++j) (*pa.grad)[static_cast<size_t>(r) * da + j] += g[j];
        if (pb.requires_grad)
          for (int j = 0; j < db; ++j) (*pb.grad)[static_cast<size_t>(r) * db + j] += g[da + j];
      }
    };
  return out;
}

// y[r, :] = x[r, idx[r]*block : (idx[r]+1)*block]
template <class Real>
Tensor<Real> select_blocks(const Tensor<Real>& x, const std::vector<int>& idx, int block) {
  if (x.rank() != 2) throw ShapeError("select_blocks: need rank 2, got " + shape_str(x.shape));
  const int n = x.shape[0], w = x.shape[1];
  if (block <= 0 || w % block != 0) throw ShapeError("select_blocks: width not divisible by block");
  const int nblocks = w / block;
  if (static_cast<int>(idx.size()) != n) throw ShapeError("select_blocks: index count != rows");
  for (int i : idx)
    if (i < 0 || i >= nblocks) throw ShapeError("select_blocks: block index out of range");
  Tensor<Real> out = detail::op_result({n, block}, {x});
  for (int r = 0; r < n; ++r)
    std::copy_n(x.ptr() + static_cast<size_t>(r) * w + static_cast<size_t>(idx[r]) * block, block,
                out.ptr() + static_cast<size_t>(r) * block);
  if (out.node)
    out.node->backward = [n, w, block, idx](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      for (int r = 0; r < n; ++r) {
        Real* g = p.grad->data() + static_cast<size_t>(r) * w + static_cast<size_t>(idx[r]) * block;
        const Real* og = o.gptr() + static_cast<size_t>(r) * block;
        for (int j = 0; j < block; ++j) g[j] += og[j];
      }
    };
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> mean_over_axis(const Tensor<Real>& x, int axis) {
  if (axis < 0 || axis >= x.rank()) throw ShapeError("mean_over_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape));
  Shape os;
  size_t outer = 1, inner = 1;
  const int ext = x.shape[axis];
  for (int d = 0; d < x.rank(); ++d) {
    if (d < axis) outer *= static_cast<size_t>(x.shape[d]);
    if (d > axis) inner *= static_cast<size_t>(x.shape[d]);
    if (d != axis) os.push_back(x.shape[d]);
  }
  if (os.empty()) os.push_back(1);
  Tensor<Real> out = detail::op_result(os, {x});
  const Real inv = Real(1) / static_cast<Real>(ext);
  for (size_t o = 0; o < outer; ++o)
    for (int e = 0; e < ext; ++e) {
      const Real* src = x.ptr() + (o * ext + static_cast<size_t>(e)) * inner;
      Real* dst = out.ptr() + o * inner;
      for (size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
    }
  if (out.node)
    out.node->backward = [outer, inner, ext, inv](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      for (size_t ou = 0; ou < outer; ++ou)
        for (int e = 0; e < ext; ++e) {
          Real* dst = p.grad->data() + (ou * ext + static_cast<size_t>(e)) * inner;
          const Real* g = o.gptr() + ou * inner;
          for (size_t i = 0; i < inner; ++i) dst[i] += g[i] * inv;
        }
    };
  return out;
}

template <class Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
  Tensor<Real> out = detail::op_result({1}, {x});
  Real acc = Real(0);
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) acc += (*x.data)[i];
  (*out.data)[0] = acc;
  if (out.node)
    out.node->backward = [n](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      const Real g = (*o.grad)[0];
      for (size_t i = 0; i < n; ++i) (*p.grad)[i] += g;
    };
  return out;
}

template <class Real>
Tensor<Real> mean_all(const Tensor<Real>& x) {
  return scale(sum_all(x), Real(1) / static_cast<Real>(x.numel()));
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
    throw ShapeError("matmul: " + shape_str(a.shape) + " x " + shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor<Real> out = detail::op_result({m, n}, {a, b});
  detail::gemm_acc(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (out.node)
    out.node->backward = [m, k, n](const Tensor<Real>& o) {
      const Tensor<Real>& pa = o.node->parents[0];
      const Tensor<Real>& pb = o.node->parents[1];
      // dA += dC * B^T ; dB += A^T * dC
      if (pa.requires_grad) detail::gemm_nt_acc(o.gptr(), pb.ptr(), pa.grad->data(), m, n, k);
      if (pb.requires_grad) {
        const Real* ap = pa.ptr();
        const Real* gp = o.gptr();
        Real* gb = pb.grad->data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const Real av = ap[static_cast<size_t>(i) * k + p];
            if (av == Real(0)) continue;
            Real* dst = gb + static_cast<size_t>(p) * n;
            const Real* g = gp + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) dst[j] += av * g[j];
          }
      }
    };
  return out;
}

// a[m,k] * b[n,k]^T -> [m,n]; the similarity-matrix workhorse
template <class Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1])
    throw ShapeError("matmul_nt: " + shape_str(a.shape) + " x " + shape_str(b.shape) + "^T");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
  Tensor<Real> out = detail::op_result({m, n}, {a, b});
  detail::gemm_nt_acc(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (out.node)
    out.node->backward = [m, k, n](const Tensor<Real>& o) {
      const Tensor<Real>& pa = o.node->parents[0];
      const Tensor<Real>& pb = o.node->parents[1];
      // dA += dC * B ; dB += dC^T * A
      if (pa.requires_grad) detail::gemm_acc(o.gptr(), pb.ptr(), pa.grad->data(), m, n, k);
      if (pb.requires_grad) {
        const Real* gp = o.gptr();
        const Real* ap = pa.ptr();
        Real* gb = pb.grad->data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const Real g = gp[static_cast<size_t>(i) * n + j];
            if (g == Real(0)) continue;
            const Real* ar = ap + static_cast<size_t>(i) * k;
            Real* dst = gb + static_cast<size_t>(j) * k;
            for (int p = 0; p < k; ++p) dst[p] += g * ar[p];
          }
      }
    };
  return out;
}

// grouped matmuls over `groups` contiguous row blocks (used by self-attention)
template <class Real>
Tensor<Real> block_matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b, int groups) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1])
    throw ShapeError("block_matmul_nt: " + shape_str(a.shape) + " x " + shape_str(b.shape));
  if (groups <= 0 || a.shape[0] % groups != 0 || b.shape[0] % groups != 0)
    throw ShapeError("block_matmul_nt: rows not divisible by groups");
  const int ta = a.shape[0] / groups, tb = b.shape[0] / groups, k = a.shape[1];
  Tensor<Real> out = detail::op_result({a.shape[0], tb}, {a, b});
  for (int g = 0; g < groups; ++g)
    detail::gemm_nt_acc(a.ptr() + static_cast<size_t>(g) * ta * k, b.ptr() + static_cast<size_t>(g) * tb * k,
                        out.ptr() + static_cast<size_t>(g) * ta * tb, ta, k, tb);
  if (out.node)
    out.node->backward = [groups, ta, tb, k](const Tensor<Real>& o) {
      const Tensor<Real>& pa = o.node->parents[0];
      const Tensor<Real>& pb = o.node->parents[1];
      for (int g = 0; g < groups; ++g) {
        const Real* go = o.gptr() + static_cast<size_t>(g) * ta * tb;
        if (pa.requires_grad)
          detail::gemm_acc(go, pb.ptr() + static_cast<size_t>(g) * tb * k,
                           pa.grad->data() + static_cast<size_t>(g) * ta * k, ta, tb, k);
        if (pb.requires_grad) {
          const Real* ap = pa.ptr() + static_cast<size_t>(g) * ta * k;
          Real* gb = pb.grad->data() + static_cast<size_t>(g) * tb * k;
          for (int i = 0; i < ta; ++i)
            for (int j = 0; j < tb; ++j) {
              const Real gv = go[static_cast<size_t>(i) * tb + j];
              if (gv == Real(0)) continue;
              for (int p = 0; p < k; ++p) gb[static_cast<size_t>(j) * k + p] += gv * ap[static_cast<size_t>(i) * k + p];
            }
        }
      }
    };
  return out;
}

template <class Real>
Tensor<Real> block_matmul(const Tensor<Real>& a, const Tensor<Real>& b, int groups) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("block_matmul: need rank 2");
  if (groups <= 0 || a.shape[0] % groups != 0 || b.shape[0] % groups != 0)
    throw ShapeError("block_matmul: rows not divisible by groups");
  const int ta = a.shape[0] / groups, tb = b.shape[0] / groups, k = b.shape[1];
  if (a.shape[1] != tb) throw ShapeError("block_matmul: inner extent mismatch");
  Tensor<Real> out = detail::op_result({a.shape[0], k}, {a, b});
  for (int g = 0; g < groups; ++g)
    detail::gemm_acc(a.ptr() + static_cast<size_t>(g) * ta * tb, b.ptr() + static_cast<size_t>(g) * tb * k,
                     out.ptr() + static_cast<size_t>(g) * ta * k, ta, tb, k);
  if (out.node)
    out.node->backward = [groups, ta, tb, k](const Tensor<Real>& o) {
      const Tensor<Real>& pa = o.node->parents[0];
      const Tensor<Real>& pb = o.node->parents[1];
      for (int g = 0; g < groups; ++g) {
        const Real* go = o.gptr() + static_cast<size_t>(g) * ta * k;
        if (pa.requires_grad)
          detail::gemm_nt_acc(go, pb.ptr() + static_cast<size_t>(g) * tb * k,
                              pa.grad->data() + static_cast<size_t>(g) * ta * tb, ta, k, tb);
        if (pb.requires_grad) {
          const Real* ap = pa.ptr() + static_cast<size_t>(g) * ta * tb;
          Real* gb = pb.grad->data() + static_cast<size_t>(g) * tb * k;
          for (int i = 0; i < ta; ++i)
            for (int p = 0; p < tb; ++p) {
              const Real av = ap[static_cast<size_t>(i) * tb + p];
              if (av == Real(0)) continue;
              const Real* g2 = go + static_cast<size_t>(i) * k;
              Real* dst = gb + static_cast<size_t>(p) * k;
              for (int j = 0; j < k; ++j) dst[j] += av * g2[j];
            }
        }
      }
    };
  return out;
}

// y = x + b broadcast over rows; x [n,d], b [d]
template <class Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& b) {
  if (x.rank() != 2 || b.rank() != 1 || x.shape[1] != b.shape[0])
    throw ShapeError("add_bias: " + shape_str(x.shape) + " + " + shape_str(b.shape));
  const int n = x.shape[0], d = x.shape[1];
  Tensor<Real> out = detail::op_result(x.shape, {x, b});
  for (int r = 0; r < n; ++r) {
    const Real* src = x.ptr() + static_cast<size_t>(r) * d;
    Real* dst = out.ptr() + static_cast<size_t>(r) * d;
    for (int j = 0; j < d; ++j) dst[j] = src[j] + (*b.data)[j];
  }
  if (out.node)
    out.node->backward = [n, d](const Tensor<Real>& o) {
      const Tensor<Real>& px = o.node->parents[0];
      const Tensor<Real>& pb = o.node->parents[1];
      if (px.requires_grad) {
        const size_t total = static_cast<size_t>(n) * d;
        for (size_t i = 0; i < total; ++i) (*px.grad)[i] += (*o.grad)[i];
      }
      if (pb.requires_grad)
        for (int r = 0; r < n; ++r) {
          const Real* g = o.gptr() + static_cast<size_t>(r) * d;
          for (int j = 0; j < d; ++j) (*pb.grad)[j] += g[j];
        }
    };
  return out;
}

// ---------------------------------------------------------------------------
// softmax / normalization / losses
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x) {
  if (x.rank() != 2) throw ShapeError("softmax_rows: need rank 2, got " + shape_str(x.shape));
  const int n = x.shape[0], m = x.shape[1];
  Tensor<Real> out = detail::op_result(x.shape, {x});
  for (int r = 0; r < n; ++r) {
    const Real* src = x.ptr() + static_cast<size_t>(r) * m;
    Real* dst = out.ptr() + static_cast<size_t>(r) * m;
    Real mx = src[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, src[j]);
    Real z = Real(0);
    for (int j = 0; j < m; ++j) {
      dst[j] = std::exp(src[j] - mx);
      z += dst[j];
    }
    const Real inv = Real(1) / z;
    for (int j = 0; j < m; ++j) dst[j] *= inv;
  }
  if (out.node)
    out.node->backward = [n, m](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      for (int r = 0; r < n; ++r) {
        const Real* y = o.ptr() + static_cast<size_t>(r) * m;
        const Real* g = o.gptr() + static_cast<size_t>(r) * m;
        Real dot = Real(0);
        for (int j = 0; j < m; ++j) dot += y[j] * g[j];
        Real* dst = p.grad->data() + static_cast<size_t>(r) * m;
        for (int j = 0; j < m; ++j) dst[j] += y[j] * (g[j] - dot);
      }
    };
  return out;
}

// rows scaled to unit L2 norm; rows with norm <= eps are scaled by 1/eps
// (a zero row stays zero and keeps a finite gradient)
template <class Real>
Tensor<Real> l2_normalize_rows(const Tensor<Real>& x) {
  if (x.rank() != 2) throw ShapeError("l2_normalize_rows: need rank 2, got " + shape_str(x.shape));
  const int n = x.shape[0], d = x.shape[1];
  const Real eps = Real(1e-12);
  Tensor<Real> out = detail::op_result(x.shape, {x});
  std::vector<Real> norms(static_cast<size_t>(n));
  for (int r = 0; r < n; ++r) {
    const Real* src = x.ptr() + static_cast<size_t>(r) * d;
    Real s = Real(0);
    for (int j = 0; j < d; ++j) s += src[j] * src[j];
    const Real nrm = std::max(std::sqrt(s), eps);
    norms[static_cast<size_t>(r)] = nrm;
    Real* dst = out.ptr() + static_cast<size_t>(r) * d;
    const Real inv = Real(1) / nrm;
    for (int j = 0; j < d; ++j) dst[j] = src[j] * inv;
  }
  if (out.node)
    out.node->backward = [n, d, norms](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      for (int r = 0; r < n; ++r) {
        const Real* y = o.ptr() + static_cast<size_t>(r) * d;
        const Real* g = o.gptr() + static_cast<size_t>(r) * d;
        Real* dst = p.grad->data() + static_cast<size_t>(r) * d;
        const Real inv = Real(1) / norms[static_cast<size_t>(r)];
        Real dot = Real(0);
        for (int j = 0; j < d; ++j) dot += y[j] * g[j];
        for (int j = 0; j < d; ++j) dst[j] += (g[j] - y[j] * dot) * inv;
      }
    };
  return out;
}

// mean over rows of -log softmax(logits)[label]; row-max stabilized
template <class Real>
Tensor<Real> cross_entropy_rows(const Tensor<Real>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy_rows: need rank 2, got " + shape_str(logits.shape));
  const int n = logits.shape[0], m = logits.shape[1];
  if (static_cast<int>(labels.size()) != n) throw ShapeError("cross_entropy_rows: label count != rows");
  for (int l : labels)
    if (l < 0 || l >= m) throw ShapeError("cross_entropy_rows: label " + std::to_string(l) + " out of [0," + std::to_string(m) + ")");
  Tensor<Real> out = detail::op_result({1}, {logits});
  Real total = Real(0);
  for (int r = 0; r < n; ++r) {
    const Real* src = logits.ptr() + static_cast<size_t>(r) * m;
    Real mx = src[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, src[j]);
    Real z = Real(0);
    for (int j = 0; j < m; ++j) z += std::exp(src[j] - mx);
    total += mx + std::log(z) - src[labels[static_cast<size_t>(r)]];
  }
  (*out.data)[0] = total / static_cast<Real>(n);
  if (out.node)
    out.node->backward = [n, m, labels](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      const Real g = (*o.grad)[0] / static_cast<Real>(n);
      for (int r = 0; r < n; ++r) {
        const Real* src = p.ptr() + static_cast<size_t>(r) * m;
        Real* dst = p.grad->data() + static_cast<size_t>(r) * m;
        Real mx = src[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, src[j]);
        Real z = Real(0);
        for (int j = 0; j < m; ++j) z += std::exp(src[j] - mx);
        const Real inv = Real(1) / z;
        for (int j = 0; j < m; ++j) dst[j] += g * std::exp(src[j] - mx) * inv;
        dst[labels[static_cast<size_t>(r)]] -= g;
      }
    };
  return out;
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

// Deterministic mask: (seed, element index) -> keep decision. The same
// (seed, shape, keep_prob) always realizes the identical mask.
struct DropoutMask {
  uint64_t seed = 0;
  double keep_prob = 1.0;

  bool kept(size_t index) const {
    return static_cast<double>(hash_u64(seed, index) >> 11) * 0x1.0p-53 < keep_prob;
  }
};

template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, const DropoutMask& mask, bool training) {
  if (!(mask.keep_prob > 0.0) || mask.keep_prob > 1.0)
    throw ShapeError("dropout: keep_prob must be in (0,1], got " + std::to_string(mask.keep_prob));
  if (!training || mask.keep_prob == 1.0) {
    // eval mode (and keep_prob 1) is the identity
    Tensor<Real> out = detail::op_result(x.shape, {x});
    *out.data = *x.data;
    if (out.node)
      out.node->backward = [](const Tensor<Real>& o) {
        const Tensor<Real>& p = o.node->parents[0];
        if (!p.requires_grad) return;
        const size_t n = o.numel();
        for (size_t i = 0; i < n; ++i) (*p.grad)[i] += (*o.grad)[i];
      };
    return out;
  }
  Tensor<Real> out = detail::op_result(x.shape, {x});
  const size_t n = out.numel();
  const Real inv_keep = Real(1.0 / mask.keep_prob);
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = mask.kept(i) ? (*x.data)[i] * inv_keep : Real(0);
  if (out.node)
    out.node->backward = [n, mask, inv_keep](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      for (size_t i = 0; i < n; ++i)
        if (mask.kept(i)) (*p.grad)[i] += (*o.grad)[i] * inv_keep;
    };
  return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
void im2col(const Real* x, int ci, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo, Real* colt) {
  // colt is [ci*kh*kw, ho*wo]
  const int p = ho * wo;
  for (int c = 0; c < ci; ++c) {
    const Real* plane = x + static_cast<size_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        Real* row = colt + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(ky) * kw + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          Real* dst = row + static_cast<size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < wo; ++ox) dst[ox] = Real(0);
            continue;
          }
          const Real* srow = plane + static_cast<size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? srow[ix] : Real(0);
          }
        }
      }
  }
}

template <class Real>
void col2im_acc(const Real* colt, int ci, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo, Real* gx) {
  const int p = ho * wo;
  for (int c = 0; c < ci; ++c) {
    Real* plane = gx + static_cast<size_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const Real* row = colt + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(ky) * kw + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          Real* drow = plane + static_cast<size_t>(iy) * w;
          const Real* srow = row + static_cast<size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
  }
}

}  // namespace detail

// Cross-correlation with zero padding. x is [ci,h,w] or [n,ci,h,w];
// kernels [co,ci,kh,kw]; bias [co].
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& kernels, const Tensor<Real>& bias, int stride, int pad) {
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) throw ShapeError("conv2d: input must be rank 3 or 4, got " + shape_str(x.shape));
  if (kernels.rank() != 4) throw ShapeError("conv2d: kernels must be rank 4, got " + shape_str(kernels.shape));
  const int n = batched ? x.shape[0] : 1;
  const int ci = batched ? x.shape[1] : x.shape[0];
  const int h = batched ? x.shape[2] : x.shape[1];
  const int w = batched ? x.shape[3] : x.shape[2];
  const int co = kernels.shape[0], kh = kernels.shape[2], kw = kernels.shape[3];
  if (kernels.shape[1] != ci) throw ShapeError("conv2d: kernel channels " + std::to_string(kernels.shape[1]) + " != input channels " + std::to_string(ci));
  if (bias.rank() != 1 || bias.shape[0] != co) throw ShapeError("conv2d: bias must be [co]");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
  if (kh > h + 2 * pad || kw > w + 2 * pad) throw ShapeError("conv2d: kernel larger than padded input");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output");

  Shape os = batched ? Shape{n, co, ho, wo} : Shape{co, ho, wo};
  Tensor<Real> out = detail::op_result(os, {x, kernels, bias});

  const int k = ci * kh * kw, p = ho * wo;
  std::vector<Real> colt(static_cast<size_t>(k) * p);
  const size_t in_stride = static_cast<size_t>(ci) * h * w;
  const size_t out_stride = static_cast<size_t>(co) * p;
  for (int s = 0; s < n; ++s) {
    detail::im2col(x.ptr() + s * in_stride, ci, h, w, kh, kw, stride, pad, ho, wo, colt.data());
    Real* dst = out.ptr() + s * out_stride;
    for (int c = 0; c < co; ++c) {
      const Real bv = (*bias.data)[c];
      Real* row = dst + static_cast<size_t>(c) * p;
      for (int i = 0; i < p; ++i) row[i] = bv;
    }
    detail::gemm_acc(kernels.ptr(), colt.data(), dst, co, k, p);
  }

  if (out.node)
    out.node->backward = [n, ci, h, w, co, kh, kw, stride, pad, ho, wo, k, p, in_stride, out_stride](const Tensor<Real>& o) {
      const Tensor<Real>& px = o.node->parents[0];
      const Tensor<Real>& pk = o.node->parents[1];
      const Tensor<Real>& pb = o.node->parents[2];
      std::vector<Real> colt(static_cast<size_t>(k) * p);
      std::vector<Real> wt;  // kernels^T, built once if input grads are needed
      if (px.requires_grad) {
        wt.assign(static_cast<size_t>(k) * co, Real(0));
        for (int c = 0; c < co; ++c)
          for (int q = 0; q < k; ++q) wt[static_cast<size_t>(q) * co + c] = (*pk.data)[static_cast<size_t>(c) * k + q];
      }
      std::vector<Real> gcol;
      if (px.requires_grad) gcol.resize(static_cast<size_t>(k) * p);
      for (int s = 0; s < n; ++s) {
        const Real* go = o.gptr() + s * out_stride;
        if (pk.requires_grad || px.requires_grad)
          detail::im2col(px.ptr() + s * in_stride, ci, h, w, kh, kw, stride, pad, ho, wo, colt.data());
        if (pk.requires_grad) detail::gemm_nt_acc(go, colt.data(), pk.grad->data(), co, p, k);
        if (pb.requires_grad)
          for (int c = 0; c < co; ++c) {
            Real acc = Real(0);
            const Real* row = go + static_cast<size_t>(c) * p;
            for (int i = 0; i < p; ++i) acc += row[i];
            (*pb.grad)[c] += acc;
          }
        if (px.requires_grad) {
          std::fill(gcol.begin(), gcol.end(), Real(0));
          detail::gemm_acc(wt.data(), go, gcol.data(), k, co, p);
          detail::col2im_acc(gcol.data(), ci, h, w, kh, kw, stride, pad, ho, wo, px.grad->data() + s * in_stride);
        }
      }
    };
  return out;
}

// ---------------------------------------------------------------------------
// trajectory-specific terminals
// ---------------------------------------------------------------------------

// x [n, t*2] of per-step (dx,dy); y[r, 2u+c] = sum_{v<=u} x[r, 2v+c]
template <class Real>
Tensor<Real> cumsum_xy(const Tensor<Real>& x) {
  if (x.rank() != 2 || x.shape[1] % 2 != 0) throw ShapeError("cumsum_xy: need [n, t*2], got " + shape_str(x.shape));
  const int n = x.shape[0], t = x.shape[1] / 2;
  Tensor<Real> out = detail::op_result(x.shape, {x});
  for (int r = 0; r < n; ++r) {
    const Real* src = x.ptr() + static_cast<size_t>(r) * t * 2;
    Real* dst = out.ptr() + static_cast<size_t>(r) * t * 2;
    Real ax = Real(0), ay = Real(0);
    for (int s = 0; s < t; ++s) {
      ax += src[2 * s];
      ay += src[2 * s + 1];
      dst[2 * s] = ax;
      dst[2 * s + 1] = ay;
    }
  }
  if (out.node)
    out.node->backward = [n, t](const Tensor<Real>& o) {
      const Tensor<Real>& p = o.node->parents[0];
      if (!p.requires_grad) return;
      for (int r = 0; r < n; ++r) {
        const Real* g = o.gptr() + static_cast<size_t>(r) * t * 2;
        Real* dst = p.grad->data() + static_cast<size_t>(r) * t * 2;
        Real ax = Real(0), ay = Real(0);
        for (int s = t - 1; s >= 0; --s) {
          ax += g[2 * s];
          ay += g[2 * s + 1];
          dst[2 * s] += ax;
          dst[2 * s + 1] += ay;
        }
      }
    };
  return out;
}

// mean over all (row, step) of the Euclidean distance between (x,y) points;
// pred and target are [n, t*2]. Zero-distance points contribute zero gradient.
template <class Real>
Tensor<Real> mean_pointwise_l2(const Tensor<Real>& pred, const Tensor<Real>& target) {
  if (pred.shape != target.shape || pred.rank() != 2 || pred.shape[1] % 2 != 0)
    throw ShapeError("mean_pointwise_l2: need matching [n, t*2], got " + shape_str(pred.shape) + " vs " + shape_str(target.shape));
  const int n = pred.shape[0], t = pred.shape[1] / 2;
  Tensor<Real> out = detail::op_result({1}, {pred, target});
  Real total = Real(0);
  for (int r = 0; r < n; ++r)
    for (int s = 0; s < t; ++s) {
      const size_t i = static_cast<size_t>(r) * t * 2 + 2 * s;
      const Real dx = (*pred.data)[i] - (*target.data)[i];
      const Real dy = (*pred.data)[i + 1] - (*target.data)[i + 1];
      total += std::sqrt(dx * dx + dy * dy);
    }
  const Real inv = Real(1) / static_cast<Real>(n * t);
  (*out.data)[0] = total * inv;
  if (out.node)
    out.node->backward = [n, t, inv](const Tensor<Real>& o) {
      const Tensor<Real>& pp = o.node->parents[0];
      const Tensor<Real>& pt = o.node->parents[1];
      const Real g = (*o.grad)[0] * inv;
      for (int r = 0; r < n; ++r)
        for (int s = 0; s < t; ++s) {
          const size_t i = static_cast<size_t>(r) * t * 2 + 2 * s;
          const Real dx = (*pp.data)[i] - (*pt.data)[i];
          const Real dy = (*pp.data)[i + 1] - (*pt.data)[i + 1];
          const Real d = std::sqrt(dx * dx + dy * dy);
          if (d <= Real(0)) continue;
          const Real gx = g * dx / d, gy = g * dy / d;
          if (pp.requires_grad) {
            (*pp.grad)[i] += gx;
            (*pp.grad)[i + 1] += gy;
          }
          if (pt.requires_grad) {
            (*pt.grad)[i] -= gx;
            (*pt.grad)[i + 1] -= gy;
          }
        }
    };
  return out;
}

}  // namespace pretram
