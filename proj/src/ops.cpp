/*
 * Copyright 2026 The coca-desk Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "coca/ops.hpp"

#include <cmath>
#include <memory>
#include <numbers>

namespace coca {

namespace {

template <typename S>
void require_same_tape(Var<S> a, Var<S> b) {
  if (a.tape != b.tape || !a.valid() || !b.valid()) throw Error("variables from different tapes");
}

template <typename S>
void check_broadcast(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (b.size() == 1) return;
  if (b.cols() == a.cols() && b.rows() <= a.rows() && a.rows() % b.rows() == 0) return;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                   shape_str(a.shape()));
}

template <typename S>
Matrix<S> broadcast_to(const Matrix<S>& b, Index rows, Index cols) {
  if (b.rows() == rows && b.cols() == cols) return b;
  if (b.size() == 1) return Matrix<S>::Constant(rows, cols, b(0, 0));
  return b.replicate(rows / b.rows(), 1);
}

// Inverse of broadcast_to: folds a full-size gradient back onto b's extent.
template <typename S>
Matrix<S> reduce_to(const Matrix<S>& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows * cols == 1) return Matrix<S>::Constant(1, 1, g.sum());
  Matrix<S> out = Matrix<S>::Zero(rows, cols);
  for (Index k = 0; k < g.rows(); k += rows) out += g.middleRows(k, rows);
  return out;
}

Shape with_last(const Shape& shape, Index last) {
  Shape out = shape.empty() ? Shape{1} : shape;
  out.back() = last;
  return out;
}

}  // namespace

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  if (b.value().rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Matrix<S> out = a.matrix() * b.matrix();
  int ia = a.id, ib = b.id;
  return a.tape->record(
      "matmul", Tensor<S>(with_last(a.shape(), b.cols()), std::move(out)), {ia, ib},
      [ia, ib](Tape<S>& t, const Matrix<S>& g) {
        const auto& am = t.value(ia).matrix();
        const auto& bm = t.value(ib).matrix();
        if (t.needs_grad(ia)) t.accumulate(ia, g * bm.transpose());
        if (t.needs_grad(ib)) {
          if (corrupt_backward()) {
            t.accumulate(ib, S(1.05) * (am.transpose() * g));
          } else {
            t.accumulate(ib, am.transpose() * g);
          }
        }
      });
}

template <typename S>
Var<S> transpose(Var<S> a) {
  if (a.value().rank() > 2) throw ShapeError("transpose expects rank <= 2");
  Matrix<S> out = a.matrix().transpose();
  int ia = a.id;
  return a.tape->record("transpose", Tensor<S>(Shape{a.cols(), a.rows()}, std::move(out)), {ia},
                        [ia](Tape<S>& t, const Matrix<S>& g) { t.accumulate(ia, g.transpose()); });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  check_broadcast("add", a.value(), b.value());
  Matrix<S> out = a.matrix() + broadcast_to(b.matrix(), a.rows(), a.cols());
  int ia = a.id, ib = b.id;
  Index br = b.rows(), bc = b.cols();
  return a.tape->record("add", Tensor<S>(a.shape(), std::move(out)), {ia, ib},
                        [ia, ib, br, bc](Tape<S>& t, const Matrix<S>& g) {
                          t.accumulate(ia, g);
                          if (t.needs_grad(ib)) t.accumulate(ib, reduce_to(g, br, bc));
                        });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  check_broadcast("sub", a.value(), b.value());
  Matrix<S> out = a.matrix() - broadcast_to(b.matrix(), a.rows(), a.cols());
  int ia = a.id, ib = b.id;
  Index br = b.rows(), bc = b.cols();
  return a.tape->record("sub", Tensor<S>(a.shape(), std::move(out)), {ia, ib},
                        [ia, ib, br, bc](Tape<S>& t, const Matrix<S>& g) {
                          t.accumulate(ia, g);
                          if (t.needs_grad(ib)) t.accumulate(ib, -reduce_to(g, br, bc));
                        });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  check_broadcast("mul", a.value(), b.value());
  Matrix<S> out = a.matrix().cwiseProduct(broadcast_to(b.matrix(), a.rows(), a.cols()));
  int ia = a.id, ib = b.id;
  Index br = b.rows(), bc = b.cols();
  return a.tape->record(
      "mul", Tensor<S>(a.shape(), std::move(out)), {ia, ib},
      [ia, ib, br, bc](Tape<S>& t, const Matrix<S>& g) {
        const auto& am = t.value(ia).matrix();
        const auto& bm = t.value(ib).matrix();
        if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(broadcast_to(bm, am.rows(), am.cols())));
        if (t.needs_grad(ib)) t.accumulate(ib, reduce_to<S>(g.cwiseProduct(am), br, bc));
      });
}

template <typename S>
Var<S> scale(Var<S> a, S factor) {
  Matrix<S> out = a.matrix() * factor;
  int ia = a.id;
  return a.tape->record("scale", Tensor<S>(a.shape(), std::move(out)), {ia},
                        [ia, factor](Tape<S>& t, const Matrix<S>& g) { t.accumulate(ia, g * factor); });
}

template <typename S>
Var<S> exp(Var<S> a) {
  auto saved = std::make_shared<Matrix<S>>(a.matrix().array().exp().matrix());
  int ia = a.id;
  return a.tape->record("exp", Tensor<S>(a.shape(), Matrix<S>(*saved)), {ia},
                        [ia, saved](Tape<S>& t, const Matrix<S>& g) {
                          t.accumulate(ia, g.cwiseProduct(*saved));
                        });
}

template <typename S>
Var<S> gelu(Var<S> a) {
  const S inv_sqrt2 = S(1) / std::numbers::sqrt2_v<S>;
  Matrix<S> out = a.matrix().unaryExpr(
      [inv_sqrt2](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); });
  int ia = a.id;
  return a.tape->record(
      "gelu", Tensor<S>(a.shape(), std::move(out)), {ia},
      [ia, inv_sqrt2](Tape<S>& t, const Matrix<S>& g) {
        const S inv_sqrt2pi = S(1) / std::sqrt(S(2) * std::numbers::pi_v<S>);
        Matrix<S> d = t.value(ia).matrix().unaryExpr([&](S x) {
          return S(0.5) * (S(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(S(-0.5) * x * x);
        });
        t.accumulate(ia, g.cwiseProduct(d));
      });
}

namespace {

template <typename S>
Matrix<S> softmax_rows(const Matrix<S>& x) {
  Matrix<S> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    S m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

template <typename S>
Matrix<S> log_softmax_rows(const Matrix<S>& x) {
  Matrix<S> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    S m = x.row(r).maxCoeff();
    S lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  return y;
}

}  // namespace

template <typename S>
Var<S> softmax(Var<S> a) {
  Matrix<S> y = softmax_rows(a.matrix());
  int ia = a.id;
  auto saved = std::make_shared<Matrix<S>>(y);
  return a.tape->record("softmax", Tensor<S>(a.shape(), std::move(y)), {ia},
                        [ia, saved](Tape<S>& t, const Matrix<S>& g) {
                          const Matrix<S>& p = *saved;
                          Vector<S> dot = g.cwiseProduct(p).rowwise().sum();
                          t.accumulate(ia, p.cwiseProduct(g - dot.replicate(1, g.cols())));
                        });
}

template <typename S>
Var<S> log_softmax(Var<S> a) {
  Matrix<S> y = log_softmax_rows(a.matrix());
  int ia = a.id;
  auto p = std::make_shared<Matrix<S>>(y.array().exp().matrix());
  return a.tape->record("log_softmax", Tensor<S>(a.shape(), std::move(y)), {ia},
                        [ia, p](Tape<S>& t, const Matrix<S>& g) {
                          Vector<S> total = g.rowwise().sum();
                          t.accumulate(ia, g - p->cwiseProduct(total.replicate(1, g.cols())));
                        });
}

template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const Index d = x.cols();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  }
  const auto& xm = x.matrix();
  auto xhat = std::make_shared<Matrix<S>>(xm.rows(), d);
  auto inv_std = std::make_shared<Vector<S>>(xm.rows());
  for (Index r = 0; r < xm.rows(); ++r) {
    S mu = xm.row(r).mean();
    S var = (xm.row(r).array() - mu).square().mean();
    S inv = S(1) / std::sqrt(var + eps);
    (*inv_std)(r) = inv;
    xhat->row(r) = (xm.row(r).array() - mu) * inv;
  }
  Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> gv(gain.matrix().data(), d);
  Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> bv(bias.matrix().data(), d);
  Matrix<S> out = (xhat->array().rowwise() * gv.array()).rowwise() + bv.array();
  int ix = x.id, ig = gain.id, ib = bias.id;
  Shape gshape = gain.shape(), bshape = bias.shape();
  return x.tape->record(
      "layer_norm", Tensor<S>(x.shape(), std::move(out)), {ix, ig, ib},
      [ix, ig, ib, xhat, inv_std, d](Tape<S>& t, const Matrix<S>& g) {
        const auto& gm = t.value(ig).matrix();
        Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> gv(gm.data(), d);
        if (t.needs_grad(ig)) {
          Matrix<S> dg = g.cwiseProduct(*xhat).colwise().sum();
          t.accumulate(ig, Eigen::Map<const Matrix<S>>(dg.data(), gm.rows(), gm.cols()));
        }
        if (t.needs_grad(ib)) {
          Matrix<S> db = g.colwise().sum();
          const auto& bm = t.value(ib).matrix();
          t.accumulate(ib, Eigen::Map<const Matrix<S>>(db.data(), bm.rows(), bm.cols()));
        }
        if (t.needs_grad(ix)) {
          Matrix<S> dxhat = g.array().rowwise() * gv.array();
          Matrix<S> dx(g.rows(), d);
          for (Index r = 0; r < g.rows(); ++r) {
            S s1 = dxhat.row(r).sum();
            S s2 = dxhat.row(r).dot(xhat->row(r));
            dx.row(r) = ((*inv_std)(r) / S(d)) *
                        (S(d) * dxhat.row(r).array() - s1 - xhat->row(r).array() * s2);
          }
          t.accumulate(ix, dx);
        }
      });
}

template <typename S>
Var<S> embedding_lookup(Var<S> table, std::span<const int> ids) {
  const auto& tm = table.matrix();
  const Index vocab = tm.rows();
  Matrix<S> out(static_cast<Index>(ids.size()), tm.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw Error("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                  std::to_string(vocab));
    }
    out.row(static_cast<Index>(i)) = tm.row(ids[i]);
  }
  int it = table.id;
  auto saved = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  return table.tape->record(
      "embedding_lookup",
      Tensor<S>(Shape{static_cast<Index>(ids.size()), tm.cols()}, std::move(out)), {it},
      [it, saved](Tape<S>& t, const Matrix<S>& g) {
        const auto& tm = t.value(it).matrix();
        Matrix<S> dt = Matrix<S>::Zero(tm.rows(), tm.cols());
        for (std::size_t i = 0; i < saved->size(); ++i) dt.row((*saved)[i]) += g.row(static_cast<Index>(i));
        t.accumulate(it, dt);
      });
}

template <typename S>
Var<S> cross_entropy(Var<S> logits, std::span<const int> targets, Reduction reduction,
                     int ignore_index) {
  const auto& lm = logits.matrix();
  if (static_cast<Index>(targets.size()) != lm.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(lm.rows()) + " rows");
  }
  const Index vocab = lm.cols();
  Index counted = 0;
  for (int y : targets) {
    if (y == ignore_index) continue;
    if (y < 0 || y >= vocab) {
      throw Error("cross_entropy: target id " + std::to_string(y) + " out of range for " +
                  std::to_string(vocab) + " classes");
    }
    ++counted;
  }
  Matrix<S> logp = log_softmax_rows(lm);
  S total = 0;
  for (Index r = 0; r < lm.rows(); ++r) {
    int y = targets[static_cast<std::size_t>(r)];
    if (y != ignore_index) total -= logp(r, y);
  }
  S divisor = (reduction == Reduction::kMean && counted > 0) ? S(counted) : S(1);
  total /= divisor;
  int il = logits.id;
  auto saved_targets = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  auto saved_logp = std::make_shared<Matrix<S>>(std::move(logp));
  return logits.tape->record(
      "cross_entropy", Tensor<S>::scalar(total), {il},
      [il, saved_targets, saved_logp, divisor, ignore_index](Tape<S>& t, const Matrix<S>& g) {
        Matrix<S> dl = saved_logp->array().exp().matrix();
        for (Index r = 0; r < dl.rows(); ++r) {
          int y = (*saved_targets)[static_cast<std::size_t>(r)];
          if (y == ignore_index) {
            dl.row(r).setZero();
          } else {
            dl(r, y) -= S(1);
          }
        }
        t.accumulate(il, dl * (g(0, 0) / divisor));
      });
}

template <typename S>
Var<S> sum(Var<S> a) {
  int ia = a.id;
  Index r = a.rows(), c = a.cols();
  return a.tape->record("sum", Tensor<S>::scalar(a.matrix().sum()), {ia},
                        [ia, r, c](Tape<S>& t, const Matrix<S>& g) {
                          t.accumulate(ia, Matrix<S>::Constant(r, c, g(0, 0)));
                        });
}

template <typename S>
Var<S> mean(Var<S> a) {
  return scale(sum(a), S(1) / S(a.value().size()));
}

template <typename S>
Var<S> l2_normalize_rows(Var<S> a) {
  const auto& am = a.matrix();
  auto norms = std::make_shared<Vector<S>>(am.rowwise().norm());
  if ((norms->array() <= S(0)).any()) throw NumericError("l2_normalize_rows: zero-norm row");
  Matrix<S> y = am.array().colwise() / norms->array();
  int ia = a.id;
  auto saved = std::make_shared<Matrix<S>>(y);
  return a.tape->record("l2_normalize_rows", Tensor<S>(a.shape(), std::move(y)), {ia},
                        [ia, saved, norms](Tape<S>& t, const Matrix<S>& g) {
                          const Matrix<S>& y = *saved;
                          Vector<S> dot = g.cwiseProduct(y).rowwise().sum();
                          Matrix<S> dx = g - y.cwiseProduct(dot.replicate(1, g.cols()));
                          t.accumulate(ia, (dx.array().colwise() / norms->array()).matrix());
                        });
}

template <typename S>
Var<S> tile_rows(Var<S> a, Index times) {
  if (times < 1) throw ShapeError("tile_rows: times must be >= 1");
  Matrix<S> out = a.matrix().replicate(times, 1);
  int ia = a.id;
  Index r = a.rows(), c = a.cols();
  return a.tape->record("tile_rows", Tensor<S>(Shape{r * times, c}, std::move(out)), {ia},
                        [ia, r, c](Tape<S>& t, const Matrix<S>& g) { t.accumulate(ia, reduce_to(g, r, c)); });
}

template <typename S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  if (a.cols() != b.cols()) {
    throw ShapeError("concat_rows: column mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Matrix<S> out(a.rows() + b.rows(), a.cols());
  out << a.matrix(), b.matrix();
  int ia = a.id, ib = b.id;
  Index ar = a.rows(), br = b.rows();
  return a.tape->record("concat_rows", Tensor<S>(Shape{ar + br, a.cols()}, std::move(out)),
                        {ia, ib}, [ia, ib, ar, br](Tape<S>& t, const Matrix<S>& g) {
                          if (t.needs_grad(ia)) t.accumulate(ia, g.topRows(ar));
                          if (t.needs_grad(ib)) t.accumulate(ib, g.bottomRows(br));
                        });
}

template <typename S>
Var<S> gather_rows(Var<S> a, std::span<const Index> rows) {
  const auto& am = a.matrix();
  Matrix<S> out(static_cast<Index>(rows.size()), am.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= am.rows()) throw ShapeError("gather_rows: row out of range");
    out.row(static_cast<Index>(i)) = am.row(rows[i]);
  }
  int ia = a.id;
  auto saved = std::make_shared<std::vector<Index>>(rows.begin(), rows.end());
  Index r = am.rows(), c = am.cols();
  return a.tape->record("gather_rows",
                        Tensor<S>(Shape{static_cast<Index>(rows.size()), c}, std::move(out)), {ia},
                        [ia, saved, r, c](Tape<S>& t, const Matrix<S>& g) {
                          Matrix<S> da = Matrix<S>::Zero(r, c);
                          for (std::size_t i = 0; i < saved->size(); ++i) {
                            da.row((*saved)[i]) += g.row(static_cast<Index>(i));
                          }
                          t.accumulate(ia, da);
                        });
}

template <typename S>
Var<S> reshape(Var<S> a, Shape shape) {
  Tensor<S> out = a.value().reshaped(std::move(shape));
  int ia = a.id;
  Index r = a.rows(), c = a.cols();
  return a.tape->record("reshape", std::move(out), {ia}, [ia, r, c](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, Eigen::Map<const Matrix<S>>(g.data(), r, c));
  });
}

#define COCA_INSTANTIATE_OPS(S)                                                              \
  template Var<S> matmul(Var<S>, Var<S>);                                                    \
  template Var<S> transpose(Var<S>);                                                         \
  template Var<S> add(Var<S>, Var<S>);                                                       \
  template Var<S> sub(Var<S>, Var<S>);                                                       \
  template Var<S> mul(Var<S>, Var<S>);                                                       \
  template Var<S> scale(Var<S>, S);                                                          \
  template Var<S> exp(Var<S>);                                                               \
  template Var<S> gelu(Var<S>);                                                              \
  template Var<S> softmax(Var<S>);                                                           \
  template Var<S> log_softmax(Var<S>);                                                       \
  template Var<S> layer_norm(Var<S>, Var<S>, Var<S>, S);                                     \
  template Var<S> embedding_lookup(Var<S>, std::span<const int>);                            \
  template Var<S> cross_entropy(Var<S>, std::span<const int>, Reduction, int);               \
  template Var<S> sum(Var<S>);                                                               \
  template Var<S> mean(Var<S>);                                                              \
  template Var<S> l2_normalize_rows(Var<S>);                                                 \
  template Var<S> tile_rows(Var<S>, Index);                                                  \
  template Var<S> concat_rows(Var<S>, Var<S>);                                               \
  template Var<S> gather_rows(Var<S>, std::span<const Index>);                               \
  template Var<S> reshape(Var<S>, Shape);

COCA_INSTANTIATE_OPS(float)
COCA_INSTANTIATE_OPS(double)

#undef COCA_INSTANTIATE_OPS

}  // namespace coca
