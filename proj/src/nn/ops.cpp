#include "eac/nn/ops.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "eac/error.hpp"
#include "eac/rng.hpp"

namespace eac::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat view(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return CMapMat(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapMat view(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MapMat(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw ArgumentError(std::string(op) + ": shape mismatch, " + detail);
}

void require_rank(const char* op, const Var& v, std::size_t rank, const char* what) {
  if (v.shape().size() != rank) {
    shape_error(op, std::string(what) + " has shape " + shape_str(v.shape()) + ", expected rank " +
                        std::to_string(rank));
  }
}

// Leading-axes product for a [..., rows, cols] tensor.
std::size_t slices(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) n *= s[i];
  return n;
}

// Square graph operator applied slice by slice, stored sparse at or below
// this fraction of nonzero entries.
constexpr double kSparseDensity = 0.3;

class Propagator {
 public:
  Propagator(const Tensor& op, std::size_t n) {
    const auto m = view(op, n, n);
    const auto nnz = (m.array() != 0.0).count();
    if (static_cast<double>(nnz) <= kSparseDensity * static_cast<double>(n * n)) {
      sparse_ = m.sparseView();
      transposed_ = sparse_.transpose();
      is_sparse_ = true;
    } else {
      dense_ = m;
    }
  }

  // dst = scale * M src (or M^T src), added to dst when `accumulate`.
  template <typename Dst, typename Src>
  void apply(Dst&& dst, const Src& src, bool transpose, double scale, bool accumulate) const {
    if (is_sparse_) {
      const SpMat& m = transpose ? transposed_ : sparse_;
      if (accumulate) {
        dst.noalias() += scale * (m * src);
      } else {
        dst.noalias() = scale * (m * src);
      }
    } else if (transpose) {
      if (accumulate) {
        dst.noalias() += scale * (dense_.transpose() * src);
      } else {
        dst.noalias() = scale * (dense_.transpose() * src);
      }
    } else if (accumulate) {
      dst.noalias() += scale * (dense_ * src);
    } else {
      dst.noalias() = scale * (dense_ * src);
    }
  }


 private:
  using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
  bool is_sparse_ = false;
  SpMat sparse_, transposed_;
  RowMat dense_;
};

}  // namespace

Var matmul(Var a, Var b) {
  require_rank("matmul", a, 2, "a");
  require_rank("matmul", b, 2, "b");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) shape_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, n});
  view(out, m, n).noalias() = view(a.value(), m, k) * view(b.value(), k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("matmul", std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
    const auto gm = view(g, m, n);
    if (Tensor* ga = t.grad_slot(ia)) view(*ga, m, k).noalias() += gm * view(t.value(ib), k, n).transpose();
    if (Tensor* gb = t.grad_slot(ib)) view(*gb, k, n).noalias() += view(t.value(ia), m, k).transpose() * gm;
  });
}

Var add(Var a, Var b) {
  if (a.shape() != b.shape()) shape_error("add", shape_str(a.shape()) + " + " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("add", std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
    for (std::size_t id : {ia, ib}) {
      if (Tensor* s = t.grad_slot(id)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
      }
    }
  });
}

Var linear(Var x, Var w, Var b) {
  require_rank("linear", w, 2, "weight");
  require_rank("linear", b, 1, "bias");
  if (x.shape().empty()) shape_error("linear", "input is a scalar");
  const std::size_t in = w.shape()[0], out_dim = w.shape()[1];
  if (x.shape().back() != in || b.shape()[0] != out_dim) {
    shape_error("linear", "x " + shape_str(x.shape()) + ", W " + shape_str(w.shape()) + ", b " + shape_str(b.shape()));
  }
  const std::size_t rows = x.value().size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  auto y = view(out, rows, out_dim);
  y.noalias() = view(x.value(), rows, in) * view(w.value(), in, out_dim);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), static_cast<Eigen::Index>(out_dim));
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape()->record("linear", std::move(out), {x, w, b}, [=](Tape& t, const Tensor& g) {
    const auto gm = view(g, rows, out_dim);
    if (Tensor* gx = t.grad_slot(ix)) view(*gx, rows, in).noalias() += gm * view(t.value(iw), in, out_dim).transpose();
    if (Tensor* gw = t.grad_slot(iw)) view(*gw, in, out_dim).noalias() += view(t.value(ix), rows, in).transpose() * gm;
    if (Tensor* gb = t.grad_slot(ib)) view(*gb, 1, out_dim) += gm.colwise().sum();
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  const std::size_t ix = x.id();
  return x.tape()->record("relu", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_slot(ix)) {
      const Tensor& in = t.value(ix);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] > 0.0) (*gx)[i] += g[i];
      }
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape()->record("reshape", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_slot(ix)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
  });
}

Var add_node_prompt(Var h, Var p) {
  require_rank("add_node_prompt", p, 2, "prompt");
  const Shape& hs = h.shape();
  if (hs.size() < 2 || hs[hs.size() - 2] != p.shape()[0] || hs.back() != p.shape()[1]) {
    shape_error("add_node_prompt", "features " + shape_str(hs) + ", prompt " + shape_str(p.shape()));
  }
  const std::size_t block = p.value().size();
  const std::size_t count = h.value().size() / block;
  Tensor out = h.value();
  for (std::size_t s = 0; s < count; ++s) {
    double* dst = out.data() + s * block;
    for (std::size_t i = 0; i < block; ++i) dst[i] += p.value()[i];
  }
  const std::size_t ih = h.id(), ip = p.id();
  return h.tape()->record("add_node_prompt", std::move(out), {h, p}, [=](Tape& t, const Tensor& g) {
    if (Tensor* gh = t.grad_slot(ih)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gh)[i] += g[i];
    }
    if (Tensor* gp = t.grad_slot(ip)) {
      for (std::size_t s = 0; s < count; ++s) {
        const double* src = g.data() + s * block;
        for (std::size_t i = 0; i < block; ++i) (*gp)[i] += src[i];
      }
    }
  });
}

Var graph_conv_spatial(const Tensor& a_hat, Var h, Var w) {
  require_rank("graph_conv_spatial", w, 2, "weight");
  const Shape& hs = h.shape();
  if (a_hat.rank() != 2 || hs.size() < 2 || a_hat.dim(0) != a_hat.dim(1) || a_hat.dim(0) != hs[hs.size() - 2] ||
      hs.back() != w.shape()[0]) {
    shape_error("graph_conv_spatial",
                "A " + shape_str(a_hat.shape()) + ", H " + shape_str(hs) + ", W " + shape_str(w.shape()));
  }
  const std::size_t n = a_hat.dim(0), din = hs.back(), dout = w.shape()[1];
  const std::size_t s_count = slices(hs);
  auto prop = std::make_shared<const Propagator>(a_hat, n);

  auto z = std::make_shared<Tensor>(Shape{s_count * n, din});
  for (std::size_t s = 0; s < s_count; ++s) {
    prop->apply(view(*z, n, din, s * n * din), view(h.value(), n, din, s * n * din), false, 1.0, false);
  }
  Shape out_shape = hs;
  out_shape.back() = dout;
  Tensor out(out_shape);
  view(out, s_count * n, dout).noalias() = view(*z, s_count * n, din) * view(w.value(), din, dout);

  const std::size_t ih = h.id(), iw = w.id();
  return h.tape()->record("graph_conv_spatial", std::move(out), {h, w}, [=](Tape& t, const Tensor& g) {
    const auto gm = view(g, s_count * n, dout);
    if (Tensor* gw = t.grad_slot(iw)) view(*gw, din, dout).noalias() += view(*z, s_count * n, din).transpose() * gm;
    if (Tensor* gh = t.grad_slot(ih)) {
      RowMat gz = gm * view(t.value(iw), din, dout).transpose();
      for (std::size_t s = 0; s < s_count; ++s) {
        prop->apply(view(*gh, n, din, s * n * din),
                    CMapMat(gz.data() + s * n * din, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(din)),
                    true, 1.0, true);
      }
    }
  });
}

Var graph_conv_cheb(const Tensor& l_tilde, Var h, std::span<const Var> thetas) {
  const Shape& hs = h.shape();
  if (thetas.empty()) shape_error("graph_conv_cheb", "no Chebyshev coefficients");
  if (l_tilde.rank() != 2 || hs.size() < 2 || l_tilde.dim(0) != l_tilde.dim(1) || l_tilde.dim(0) != hs[hs.size() - 2]) {
    shape_error("graph_conv_cheb", "L " + shape_str(l_tilde.shape()) + ", H " + shape_str(hs));
  }
  const std::size_t n = l_tilde.dim(0), din = hs.back();
  const std::size_t dout = thetas[0].shape().size() == 2 ? thetas[0].shape()[1] : 0;
  for (const Var& th : thetas) {
    if (th.shape() != Shape{din, dout}) {
      shape_error("graph_conv_cheb", "theta " + shape_str(th.shape()) + " for H " + shape_str(hs));
    }
  }
  const std::size_t order = thetas.size() - 1;
  const std::size_t s_count = slices(hs);
  const std::size_t rows = s_count * n;
  auto prop = std::make_shared<const Propagator>(l_tilde, n);

  // basis[k] holds T_k(L) H for every slice, stacked.
  auto basis = std::make_shared<std::vector<Tensor>>();
  basis->push_back(Tensor(Shape{rows, din}, h.value().storage()));
  for (std::size_t k = 1; k <= order; ++k) {
    Tensor next(Shape{rows, din});
    for (std::size_t s = 0; s < s_count; ++s) {
      const std::size_t off = s * n * din;
      auto dst = view(next, n, din, off);
      prop->apply(dst, view((*basis)[k - 1], n, din, off), false, k >= 2 ? 2.0 : 1.0, false);
      if (k >= 2) dst -= view((*basis)[k - 2], n, din, off);
    }
    basis->push_back(std::move(next));
  }

  Shape out_shape = hs;
  out_shape.back() = dout;
  Tensor out(out_shape);
  auto y = view(out, rows, dout);
  for (std::size_t k = 0; k <= order; ++k) y.noalias() += view((*basis)[k], rows, din) * view(thetas[k].value(), din, dout);

  std::vector<Var> inputs{h};
  std::vector<std::size_t> theta_ids;
  for (const Var& th : thetas) {
    inputs.push_back(th);
    theta_ids.push_back(th.id());
  }
  const std::size_t ih = h.id();
  return h.tape()->record("graph_conv_cheb", std::move(out), inputs, [=](Tape& t, const Tensor& g) {
    const auto gm = view(g, rows, dout);
    for (std::size_t k = 0; k <= order; ++k) {
      if (Tensor* gt = t.grad_slot(theta_ids[k])) {
        view(*gt, din, dout).noalias() += view((*basis)[k], rows, din).transpose() * gm;
      }
    }
    Tensor* gh = t.grad_slot(ih);
    if (!gh) return;
    std::vector<RowMat> back(order + 1);
    for (std::size_t k = 0; k <= order; ++k) back[k] = gm * view(t.value(theta_ids[k]), din, dout).transpose();
    auto slice = [&](RowMat& m, std::size_t s) {
      return MapMat(m.data() + s * n * din, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(din));
    };
    for (std::size_t k = order; k >= 1; --k) {
      for (std::size_t s = 0; s < s_count; ++s) {
        const double scale = k >= 2 ? 2.0 : 1.0;
        prop->apply(slice(back[k - 1], s), slice(back[k], s), true, scale, true);
      }
      if (k >= 2) back[k - 2] -= back[k];
    }
    view(*gh, rows, din) += back[0];
  });
}

Var temporal_conv(Var x, Var w, Var b) {
  require_rank("temporal_conv", x, 4, "input");
  require_rank("temporal_conv", w, 3, "kernel");
  require_rank("temporal_conv", b, 1, "bias");
  const std::size_t batch = x.shape()[0], steps = x.shape()[1], n = x.shape()[2], din = x.shape()[3];
  const std::size_t width = w.shape()[0], dout = w.shape()[2];
  if (width % 2 == 0 || w.shape()[1] != din || b.shape()[0] != dout) {
    shape_error("temporal_conv", "x " + shape_str(x.shape()) + ", W " + shape_str(w.shape()) + ", b " +
                                     shape_str(b.shape()));
  }
  const std::size_t pad = width / 2;

  struct Block {
    std::size_t out_row, in_row, rows, tap;
  };
  std::vector<Block> blocks;
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t j = 0; j < width; ++j) {
      // Output step t reads input step t + j - pad.
      const std::size_t t_lo = j < pad ? pad - j : 0;
      const std::size_t t_hi = std::min(steps, steps + pad - j);
      if (t_hi <= t_lo) continue;
      blocks.push_back({(bi * steps + t_lo) * n, (bi * steps + t_lo + j - pad) * n, (t_hi - t_lo) * n, j});
    }
  }

  Tensor out({batch, steps, n, dout});
  auto y = view(out, batch * steps * n, dout);
  y.rowwise() = Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), static_cast<Eigen::Index>(dout));
  for (const Block& blk : blocks) {
    view(out, blk.rows, dout, blk.out_row * dout).noalias() +=
        view(x.value(), blk.rows, din, blk.in_row * din) * view(w.value(), din, dout, blk.tap * din * dout);
  }

  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  const std::size_t total_rows = batch * steps * n;
  return x.tape()->record("temporal_conv", std::move(out), {x, w, b}, [=](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_slot(ix);
    Tensor* gw = t.grad_slot(iw);
    if (Tensor* gb = t.grad_slot(ib)) view(*gb, 1, dout) += view(g, total_rows, dout).colwise().sum();
    for (const Block& blk : blocks) {
      const auto gy = view(g, blk.rows, dout, blk.out_row * dout);
      if (gw) {
        view(*gw, din, dout, blk.tap * din * dout).noalias() +=
            view(t.value(ix), blk.rows, din, blk.in_row * din).transpose() * gy;
      }
      if (gx) {
        view(*gx, blk.rows, din, blk.in_row * din).noalias() +=
            gy * view(t.value(iw), din, dout, blk.tap * din * dout).transpose();
      }
    }
  });
}

Var mean_pool_time(Var x) {
  require_rank("mean_pool_time", x, 4, "input");
  const std::size_t batch = x.shape()[0], steps = x.shape()[1], inner = x.shape()[2] * x.shape()[3];
  if (steps == 0) shape_error("mean_pool_time", "zero-length time axis");
  Tensor out({batch, x.shape()[2], x.shape()[3]});
  const double scale = 1.0 / static_cast<double>(steps);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t t = 0; t < steps; ++t) {
      const double* src = x.value().data() + (bi * steps + t) * inner;
      double* dst = out.data() + bi * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  for (double& v : out.storage()) v *= scale;
  const std::size_t ix = x.id();
  return x.tape()->record("mean_pool_time", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_slot(ix)) {
      for (std::size_t bi = 0; bi < batch; ++bi) {
        for (std::size_t tt = 0; tt < steps; ++tt) {
          double* dst = gx->data() + (bi * steps + tt) * inner;
          const double* src = g.data() + bi * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += scale * src[i];
        }
      }
    }
  });
}

Var dropout(Var x, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ArgumentError("dropout: p must lie in [0, 1)");
  if (p == 0.0) return x;
  Rng rng(seed);
  const double keep = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.value().size());
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() >= p ? keep : 0.0;
    out[i] *= (*mask)[i];
  }
  const std::size_t ix = x.id();
  return x.tape()->record("dropout", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_slot(ix)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += (*mask)[i] * g[i];
    }
  });
}

Var mse_loss(Var pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    shape_error("mse_loss", "pred " + shape_str(pred.shape()) + ", target " + shape_str(target.shape()));
  }
  const std::size_t count = target.size();
  if (count == 0) shape_error("mse_loss", "empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double e = pred.value()[i] - target[i];
    sum += e * e;
  }
  auto target_keep = std::make_shared<Tensor>(target);
  const std::size_t ip = pred.id();
  return pred.tape()->record("mse_loss", Tensor::scalar(sum / static_cast<double>(count)), {pred},
                             [=](Tape& t, const Tensor& g) {
                               if (Tensor* gp = t.grad_slot(ip)) {
                                 const double scale = 2.0 * g[0] / static_cast<double>(count);
                                 const Tensor& pv = t.value(ip);
                                 for (std::size_t i = 0; i < count; ++i) {
                                   (*gp)[i] += scale * (pv[i] - (*target_keep)[i]);
                                 }
                               }
                             });
}

Var concat_rows(std::span<const Var> blocks) {
  if (blocks.empty()) shape_error("concat_rows", "no blocks");
  const std::size_t cols = blocks[0].shape().size() == 2 ? blocks[0].shape()[1] : 0;
  std::size_t rows = 0;
  for (const Var& b : blocks) {
    if (b.shape().size() != 2 || b.shape()[1] != cols) {
      shape_error("concat_rows", "block " + shape_str(b.shape()) + " vs " + std::to_string(cols) + " columns");
    }
    rows += b.shape()[0];
  }
  Tensor out({rows, cols});
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& b : blocks) {
    std::copy(b.value().storage().begin(), b.value().storage().end(), out.storage().begin() + static_cast<long>(off));
    ids.push_back(b.id());
    offsets.push_back(off);
    off += b.value().size();
  }
  return blocks[0].tape()->record("concat_rows", std::move(out), blocks, [=](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor* gb = t.grad_slot(ids[k])) {
        for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += g[offsets[k] + i];
      }
    }
  });
}

Var swap_last_two(Var x) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) shape_error("swap_last_two", "input " + shape_str(xs));
  const std::size_t r = xs[xs.size() - 2], c = xs.back(), count = slices(xs);
  Shape out_shape = xs;
  std::swap(out_shape[xs.size() - 2], out_shape[xs.size() - 1]);
  Tensor out(out_shape);
  for (std::size_t s = 0; s < count; ++s) view(out, c, r, s * r * c) = view(x.value(), r, c, s * r * c).transpose();
  const std::size_t ix = x.id();
  return x.tape()->record("swap_last_two", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_slot(ix)) {
      for (std::size_t s = 0; s < count; ++s) view(*gx, r, c, s * r * c) += view(g, c, r, s * r * c).transpose();
    }
  });
}

}  // namespace eac::nn
