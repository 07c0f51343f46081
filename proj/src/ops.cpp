#include "spdnas/ops.hpp"

#include <cmath>
#include <string>

#include "spdnas/error.hpp"

namespace spdnas::op {

namespace {

Tape& tape_of(Var v) {
  if (!v.valid()) throw ContractError("op: empty Var");
  return *v.tape();
}

bool sym(Var v) { return v.tape()->node(v).symmetric; }

void same_shape(Var a, Var b, const char* what) {
  require_same_shape(a.value(), b.value(), what);
}

}  // namespace

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  return tape_of(a).record(
      "add", {a, b}, a.value() + b.value(),
      [a, b](const Matrix& g, Adjoints& out) {
        out.add(a, g);
        out.add(b, g);
      },
      sym(a) && sym(b));
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  return tape_of(a).record(
      "sub", {a, b}, a.value() - b.value(),
      [a, b](const Matrix& g, Adjoints& out) {
        out.add(a, g);
        out.add(b, -g);
      },
      sym(a) && sym(b));
}

Var scale(Var a, double c) {
  return tape_of(a).record(
      "scale", {a}, c * a.value(), [a, c](const Matrix& g, Adjoints& out) { out.add(a, c * g); },
      sym(a));
}

Var scale(Var a, Var s) {
  if (s.value().size() != 1) throw ShapeError("scale: factor must be 1x1");
  return tape_of(a).record(
      "scale_var", {a, s}, s.scalar() * a.value(),
      [a, s](const Matrix& g, Adjoints& out) {
        out.add(a, s.scalar() * g);
        out.add(s, Matrix::Constant(1, 1, (g.array() * a.value().array()).sum()));
      },
      sym(a));
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()));
  }
  return tape_of(a).record("matmul", {a, b}, a.value() * b.value(),
                           [a, b](const Matrix& g, Adjoints& out) {
                             out.add(a, g * b.value().transpose());
                             out.add(b, a.value().transpose() * g);
                           });
}

Var transpose(Var a) {
  return tape_of(a).record(
      "transpose", {a}, a.value().transpose(),
      [a](const Matrix& g, Adjoints& out) { out.add(a, g.transpose()); }, sym(a));
}

Var congruence(Var w, Var x) {
  if (x.rows() != x.cols() || w.rows() != x.rows()) {
    throw ShapeError("bimap: weight is " + std::to_string(w.rows()) + "x" +
                     std::to_string(w.cols()) + " but input is " + std::to_string(x.rows()) +
                     "x" + std::to_string(x.cols()));
  }
  const Matrix xw = x.value() * w.value();
  Matrix y = w.value().transpose() * xw;
  y = 0.5 * (y + y.transpose()).eval();
  return tape_of(x).record(
      "congruence", {w, x}, std::move(y),
      [w, x](const Matrix& g, Adjoints& out) {
        const Matrix& wv = w.value();
        const Matrix& xv = x.value();
        out.add(x, wv * g * wv.transpose());
        out.add(w, xv * wv * g.transpose() + xv.transpose() * wv * g);
      },
      true);
}

Var sandwich(Var s, Var x) {
  same_shape(s, x, "sandwich");
  Matrix y = s.value() * x.value() * s.value();
  y = 0.5 * (y + y.transpose()).eval();
  return tape_of(x).record(
      "sandwich", {s, x}, std::move(y),
      [s, x](const Matrix& g, Adjoints& out) {
        const Matrix& sv = s.value();
        const Matrix& xv = x.value();
        out.add(x, sv.transpose() * g * sv.transpose());
        out.add(s, g * sv.transpose() * xv.transpose() + xv.transpose() * sv.transpose() * g);
      },
      true);
}

namespace {

BackwardFn spectral_backward(Var x, std::shared_ptr<const EigDecomp> eig, MatrixFunction f) {
  return [x, eig, f](const Matrix& g, Adjoints& out) {
    const Matrix p = divided_differences(eig->values, f);
    const Matrix inner = p.cwiseProduct(eig->vectors.transpose() * g * eig->vectors);
    Matrix dx = eig->vectors * inner * eig->vectors.transpose();
    out.add(x, 0.5 * (dx + dx.transpose()));
  };
}

std::string_view spectral_tag(const MatrixFunction& f) {
  switch (f.kind) {
    case MatrixFunction::Kind::kLog:
      return "logeig";
    case MatrixFunction::Kind::kExp:
      return "expeig";
    case MatrixFunction::Kind::kSqrt:
      return "sqrtm";
    case MatrixFunction::Kind::kInvSqrt:
      return "invsqrtm";
    case MatrixFunction::Kind::kPower:
      return "powm";
    case MatrixFunction::Kind::kRectify:
      return "reeig";
    case MatrixFunction::Kind::kIdentity:
      return "eigrecon";
  }
  return "spectral";
}

}  // namespace

Var spectral(Var x, const MatrixFunction& f) {
  if (x.rows() != x.cols()) throw ShapeError("spectral: input is not square");
  auto eig = std::make_shared<const EigDecomp>(sym_eig(symmetrize(x.value())));
  Matrix y = apply_spectral(*eig, f);
  return tape_of(x).record(spectral_tag(f), {x}, std::move(y), spectral_backward(x, eig, f), true,
                           eig);
}

std::pair<Var, Var> spectral_pair(Var x, const MatrixFunction& f, const MatrixFunction& g) {
  if (x.rows() != x.cols()) throw ShapeError("spectral: input is not square");
  auto eig = std::make_shared<const EigDecomp>(sym_eig(symmetrize(x.value())));
  Matrix yf = apply_spectral(*eig, f);
  Matrix yg = apply_spectral(*eig, g);
  Tape& t = tape_of(x);
  Var a = t.record(spectral_tag(f), {x}, std::move(yf), spectral_backward(x, eig, f), true, eig);
  Var b = t.record(spectral_tag(g), {x}, std::move(yg), spectral_backward(x, eig, g), true, eig);
  return {a, b};
}

Var weighted_sum(Var w, std::span<const Var> mats) {
  if (mats.empty()) throw ContractError("weighted_sum: no terms");
  if (w.cols() != 1 || w.rows() != static_cast<Eigen::Index>(mats.size())) {
    throw ShapeError("weighted_sum: " + std::to_string(mats.size()) + " terms but weight vector is " +
                     std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
  }
  const Vector& wv = w.value();
  Matrix y = wv(0) * mats[0].value();
  bool symmetric = sym(mats[0]);
  for (std::size_t i = 1; i < mats.size(); ++i) {
    same_shape(mats[0], mats[i], "weighted_sum");
    y += wv(static_cast<Eigen::Index>(i)) * mats[i].value();
    symmetric = symmetric && sym(mats[i]);
  }
  std::vector<Var> parents(mats.begin(), mats.end());
  parents.push_back(w);
  std::vector<Var> terms(mats.begin(), mats.end());
  return tape_of(w).record(
      "weighted_sum", parents, std::move(y),
      [w, terms = std::move(terms)](const Matrix& g, Adjoints& out) {
        const Vector& wv = w.value();
        Matrix dw(static_cast<Eigen::Index>(terms.size()), 1);
        for (std::size_t i = 0; i < terms.size(); ++i) {
          const auto k = static_cast<Eigen::Index>(i);
          out.add(terms[i], wv(k) * g);
          dw(k, 0) = (g.array() * terms[i].value().array()).sum();
        }
        out.add(w, dw);
      },
      symmetric);
}

Var mean(std::span<const Var> mats) {
  if (mats.empty()) throw ContractError("mean: no terms");
  const double c = 1.0 / static_cast<double>(mats.size());
  Matrix y = mats[0].value();
  bool symmetric = sym(mats[0]);
  for (std::size_t i = 1; i < mats.size(); ++i) {
    same_shape(mats[0], mats[i], "mean");
    y += mats[i].value();
    symmetric = symmetric && sym(mats[i]);
  }
  y *= c;
  std::vector<Var> terms(mats.begin(), mats.end());
  return tape_of(mats[0]).record(
      "mean", terms, std::move(y),
      [terms, c](const Matrix& g, Adjoints& out) {
        const Matrix gc = c * g;
        for (const Var& t : terms) out.add(t, gc);
      },
      symmetric);
}

Var sum(std::span<const Var> terms) {
  if (terms.empty()) throw ContractError("sum: no terms");
  Matrix y = terms[0].value();
  bool symmetric = sym(terms[0]);
  for (std::size_t i = 1; i < terms.size(); ++i) {
    same_shape(terms[0], terms[i], "sum");
    y += terms[i].value();
    symmetric = symmetric && sym(terms[i]);
  }
  std::vector<Var> parts(terms.begin(), terms.end());
  return tape_of(terms[0]).record(
      "sum", parts, std::move(y),
      [parts](const Matrix& g, Adjoints& out) {
        for (const Var& t : parts) out.add(t, g);
      },
      symmetric);
}

Var block_diag(Var a, Var b) {
  const Eigen::Index ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
  Matrix y = Matrix::Zero(ra + rb, ca + cb);
  y.topLeftCorner(ra, ca) = a.value();
  y.bottomRightCorner(rb, cb) = b.value();
  return tape_of(a).record(
      "block_diag", {a, b}, std::move(y),
      [a, b, ra, ca, rb, cb](const Matrix& g, Adjoints& out) {
        out.add(a, g.topLeftCorner(ra, ca));
        out.add(b, g.bottomRightCorner(rb, cb));
      },
      sym(a) && sym(b));
}

Var pool(Var x, int k, PoolKind kind) {
  if (k < 1) throw ConfigError("pool: kernel size must be positive");
  if (x.rows() != x.cols()) throw ShapeError("pool: input is not square");
  const Eigen::Index n = x.rows();
  const Eigen::Index m = (n + k - 1) / k;
  const Eigen::Index padded = m * k;
  Matrix xp = Matrix::Zero(padded, padded);
  xp.topLeftCorner(n, n) = x.value();

  Matrix y(m, m);
  // Flat index (row * padded + col) of the selected entry for max pooling.
  std::vector<Eigen::Index> argmax;
  if (kind == PoolKind::kMax) argmax.resize(static_cast<std::size_t>(m * m));
  const double inv_area = 1.0 / static_cast<double>(k * k);
  for (Eigen::Index bi = 0; bi < m; ++bi) {
    for (Eigen::Index bj = 0; bj < m; ++bj) {
      const auto block = xp.block(bi * k, bj * k, k, k);
      if (kind == PoolKind::kAverage) {
        y(bi, bj) = block.sum() * inv_area;
      } else {
        double best = block(0, 0);
        Eigen::Index best_r = 0, best_c = 0;
        for (Eigen::Index r = 0; r < k; ++r) {
          for (Eigen::Index c = 0; c < k; ++c) {
            if (block(r, c) > best) {
              best = block(r, c);
              best_r = r;
              best_c = c;
            }
          }
        }
        y(bi, bj) = best;
        argmax[static_cast<std::size_t>(bi * m + bj)] = (bi * k + best_r) * padded + bj * k + best_c;
      }
    }
  }
  return tape_of(x).record(
      kind == PoolKind::kAverage ? "avg_pool" : "max_pool", {x}, std::move(y),
      [x, k, kind, n, m, padded, inv_area, argmax = std::move(argmax)](const Matrix& g,
                                                                       Adjoints& out) {
        Matrix gp = Matrix::Zero(padded, padded);
        for (Eigen::Index bi = 0; bi < m; ++bi) {
          for (Eigen::Index bj = 0; bj < m; ++bj) {
            if (kind == PoolKind::kAverage) {
              gp.block(bi * k, bj * k, k, k).setConstant(g(bi, bj) * inv_area);
            } else {
              const Eigen::Index flat = argmax[static_cast<std::size_t>(bi * m + bj)];
              gp(flat / padded, flat % padded) += g(bi, bj);
            }
          }
        }
        out.add(x, gp.topLeftCorner(n, n));
      },
      sym(x));
}

Var triu_flatten(Var x) {
  if (x.rows() != x.cols()) throw ShapeError("triu_flatten: input is not square");
  const Eigen::Index n = x.rows();
  const double r2 = std::sqrt(2.0);
  Matrix y(n * (n + 1) / 2, 1);
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) y(idx++, 0) = (i == j ? 1.0 : r2) * x.value()(i, j);
  }
  return tape_of(x).record("triu_flatten", {x}, std::move(y),
                           [x, n, r2](const Matrix& g, Adjoints& out) {
                             Matrix dx = Matrix::Zero(n, n);
                             Eigen::Index idx = 0;
                             for (Eigen::Index i = 0; i < n; ++i) {
                               for (Eigen::Index j = i; j < n; ++j) {
                                 dx(i, j) = (i == j ? 1.0 : r2) * g(idx++, 0);
                               }
                             }
                             out.add(x, dx);
                           });
}

Var vconcat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("vconcat: no parts");
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.cols() != 1) throw ShapeError("vconcat: parts must be column vectors");
    total += p.rows();
  }
  Matrix y(total, 1);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    y.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return tape_of(parts[0]).record("vconcat", ps, std::move(y), [ps](const Matrix& g, Adjoints& out) {
    Eigen::Index off = 0;
    for (const Var& p : ps) {
      out.add(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var gather(Var v, std::span<const Eigen::Index> indices) {
  if (v.cols() != 1) throw ShapeError("gather: input must be a column vector");
  std::vector<Eigen::Index> idx(indices.begin(), indices.end());
  Matrix y(static_cast<Eigen::Index>(idx.size()), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= v.rows()) throw ShapeError("gather: index out of range");
    y(static_cast<Eigen::Index>(i), 0) = v.value()(idx[i], 0);
  }
  const Eigen::Index n = v.rows();
  return tape_of(v).record("gather", {v}, std::move(y), [v, idx, n](const Matrix& g, Adjoints& out) {
    Matrix dv = Matrix::Zero(n, 1);
    for (std::size_t i = 0; i < idx.size(); ++i) dv(idx[i], 0) += g(static_cast<Eigen::Index>(i), 0);
    out.add(v, dv);
  });
}

Var activation(Var z, Activation a) {
  if (z.cols() != 1) throw ShapeError("activation: logits must be a column vector");
  const Vector zv = z.value().col(0);
  Vector y = activate(a, zv);
  return tape_of(z).record("activation", {z}, Matrix(y),
                           [z, a, zv, y](const Matrix& g, Adjoints& out) {
                             out.add(z, Matrix(activate_vjp(a, zv, y, g.col(0))));
                           });
}

Var cross_entropy(Var logits, Eigen::Index label) {
  if (logits.cols() != 1) throw ShapeError("cross_entropy: logits must be a column vector");
  if (label < 0 || label >= logits.rows()) throw ContractError("cross_entropy: label out of range");
  const Vector z = logits.value().col(0);
  const double mx = z.maxCoeff();
  const Vector e = (z.array() - mx).exp();
  const double lse = mx + std::log(e.sum());
  const Vector p = e / e.sum();
  return tape_of(logits).record("cross_entropy", {logits},
                                Matrix::Constant(1, 1, lse - z(label)),
                                [logits, p, label](const Matrix& g, Adjoints& out) {
                                  Vector d = p;
                                  d(label) -= 1.0;
                                  out.add(logits, Matrix(g(0, 0) * d));
                                });
}

Var frob_sq(Var x) {
  return tape_of(x).record("frob_sq", {x}, Matrix::Constant(1, 1, x.value().squaredNorm()),
                           [x](const Matrix& g, Adjoints& out) { out.add(x, 2.0 * g(0, 0) * x.value()); });
}

Var trace(Var x) {
  if (x.rows() != x.cols()) throw ShapeError("trace: input is not square");
  const Eigen::Index n = x.rows();
  return tape_of(x).record("trace", {x}, Matrix::Constant(1, 1, x.value().trace()),
                           [x, n](const Matrix& g, Adjoints& out) {
                             out.add(x, g(0, 0) * Matrix::Identity(n, n));
                           });
}

Var dot(Var a, Var b) {
  same_shape(a, b, "dot");
  return tape_of(a).record("dot", {a, b},
                           Matrix::Constant(1, 1, (a.value().array() * b.value().array()).sum()),
                           [a, b](const Matrix& g, Adjoints& out) {
                             out.add(a, g(0, 0) * b.value());
                             out.add(b, g(0, 0) * a.value());
                           });
}

}  // namespace spdnas::op
