#include "fairdistill/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace fairdistill::ad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kSparseInput: return "sparse_input";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kSpMM: return "spmm";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLog: return "log";
    case OpKind::kAbs: return "abs";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kSubsetMean: return "subset_mean";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kRowSqDist: return "row_sq_dist";
    case OpKind::kRowCosDist: return "row_cos_dist";
    case OpKind::kRowKL: return "row_kl";
  }
  return "unknown";
}

namespace {

int arity(OpKind kind) {
  switch (kind) {
    case OpKind::kInput:
    case OpKind::kSparseInput:
    case OpKind::kConstant:
      return 0;
    case OpKind::kMatMul:
    case OpKind::kSpMM:
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kAddRow:
    case OpKind::kConcatCols:
    case OpKind::kRowSqDist:
    case OpKind::kRowCosDist:
    case OpKind::kRowKL:
      return 2;
    default:
      return 1;
  }
}

void add_into(DenseMat& dst, const DenseMat& src) {
  if (dst.empty() && !src.empty()) {
    dst = src;
    return;
  }
  auto& d = dst.data();
  const auto& s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void log_softmax_rows(const DenseMat& x, DenseMat& out) {
  out = DenseMat(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] - lse;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Bindings

Bindings& Bindings::set(const std::string& name, DenseMat value) {
  return set(name, std::make_shared<const DenseMat>(std::move(value)));
}

Bindings& Bindings::set(const std::string& name, std::shared_ptr<const DenseMat> value) {
  dense_[name] = std::move(value);
  return *this;
}

Bindings& Bindings::set(const std::string& name, std::shared_ptr<const SparseMat> value) {
  sparse_[name] = std::move(value);
  return *this;
}

const DenseMat* Bindings::dense(const std::string& name) const {
  const auto it = dense_.find(name);
  return it == dense_.end() ? nullptr : it->second.get();
}

const SparseMat* Bindings::sparse(const std::string& name) const {
  const auto it = sparse_.find(name);
  return it == sparse_.end() ? nullptr : it->second.get();
}

bool Bindings::contains(const std::string& name) const {
  return dense_.contains(name) || sparse_.contains(name);
}

// ---------------------------------------------------------------------------
// Graph construction

Var ExprGraph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::size_t ExprGraph::check(Var v) const {
  if (v.graph() != this || v.id() >= nodes_.size()) {
    throw std::invalid_argument("ExprGraph: variable belongs to a different graph");
  }
  return v.id();
}

Var ExprGraph::input(const std::string& name) {
  return push({.kind = OpKind::kInput, .name = name});
}

Var ExprGraph::sparse_input(const std::string& name) {
  return push({.kind = OpKind::kSparseInput, .name = name});
}

Var ExprGraph::constant(DenseMat value) {
  return push({.kind = OpKind::kConstant, .constant = std::make_shared<const DenseMat>(std::move(value))});
}

Var ExprGraph::matmul(Var a, Var b) { return push({.kind = OpKind::kMatMul, .a = check(a), .b = check(b)}); }

Var ExprGraph::spmm(Var sparse, Var dense) {
  const std::size_t s = check(sparse);
  if (nodes_[s].kind != OpKind::kSparseInput) {
    throw std::invalid_argument("spmm: left operand " + describe(s) + " is not a sparse input");
  }
  return push({.kind = OpKind::kSpMM, .a = s, .b = check(dense)});
}

Var ExprGraph::add(Var a, Var b) { return push({.kind = OpKind::kAdd, .a = check(a), .b = check(b)}); }
Var ExprGraph::sub(Var a, Var b) { return push({.kind = OpKind::kSub, .a = check(a), .b = check(b)}); }
Var ExprGraph::mul(Var a, Var b) { return push({.kind = OpKind::kMul, .a = check(a), .b = check(b)}); }

Var ExprGraph::scale(Var a, double factor) {
  return push({.kind = OpKind::kScale, .a = check(a), .scalar = factor});
}

Var ExprGraph::add_row(Var a, Var row) {
  return push({.kind = OpKind::kAddRow, .a = check(a), .b = check(row)});
}

Var ExprGraph::relu(Var a) { return push({.kind = OpKind::kRelu, .a = check(a)}); }
Var ExprGraph::softmax(Var a) { return push({.kind = OpKind::kSoftmax, .a = check(a)}); }
Var ExprGraph::log_softmax(Var a) { return push({.kind = OpKind::kLogSoftmax, .a = check(a)}); }
Var ExprGraph::log(Var a) { return push({.kind = OpKind::kLog, .a = check(a)}); }
Var ExprGraph::abs(Var a) { return push({.kind = OpKind::kAbs, .a = check(a)}); }

Var ExprGraph::gather_rows(Var a, std::vector<std::size_t> rows) {
  return push({.kind = OpKind::kGatherRows, .a = check(a), .rows = std::move(rows)});
}

Var ExprGraph::subset_mean(Var a, std::vector<std::size_t> rows) {
  if (rows.empty()) {
    throw std::invalid_argument("subset_mean: empty row selection");
  }
  return push({.kind = OpKind::kSubsetMean, .a = check(a), .rows = std::move(rows)});
}

Var ExprGraph::sum(Var a) { return push({.kind = OpKind::kSum, .a = check(a)}); }
Var ExprGraph::mean(Var a) { return push({.kind = OpKind::kMean, .a = check(a)}); }

Var ExprGraph::concat_cols(Var a, Var b) {
  return push({.kind = OpKind::kConcatCols, .a = check(a), .b = check(b)});
}

Var ExprGraph::row_sq_dist(Var a, Var b) {
  return push({.kind = OpKind::kRowSqDist, .a = check(a), .b = check(b)});
}

Var ExprGraph::row_cos_dist(Var a, Var b) {
  return push({.kind = OpKind::kRowCosDist, .a = check(a), .b = check(b)});
}

Var ExprGraph::row_kl(Var p_logits, Var q_logits) {
  return push({.kind = OpKind::kRowKL, .a = check(p_logits), .b = check(q_logits)});
}

std::vector<std::string> ExprGraph::input_names() const {
  std::vector<std::string> names;
  for (const auto& n : nodes_)
    if (n.kind == OpKind::kInput || n.kind == OpKind::kSparseInput) names.push_back(n.name);
  return names;
}

std::string ExprGraph::describe(Var v) const { return describe(check(v)); }

std::string ExprGraph::describe(std::size_t id) const {
  const Node& n = nodes_[id];
  std::string s = "#" + std::to_string(id) + " " + std::string(op_name(n.kind));
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s;
}

Var operator+(Var a, Var b) { return a.graph()->add(a, b); }
Var operator-(Var a, Var b) { return a.graph()->sub(a, b); }
Var operator*(Var a, Var b) { return a.graph()->mul(a, b); }
Var operator*(double factor, Var a) { return a.graph()->scale(a, factor); }

// ---------------------------------------------------------------------------
// Evaluation

struct ExprGraph::Evaluation {
  std::vector<bool> live;
  std::vector<const DenseMat*> value;
  std::vector<DenseMat> owned;
  std::vector<const SparseMat*> sparse;
  // Auxiliary per-node caches (softmax probabilities, log-softmax pairs).
  std::vector<DenseMat> aux_a;
  std::vector<DenseMat> aux_b;
};

std::vector<bool> ExprGraph::reachable_from(std::size_t root) const {
  std::vector<bool> live(nodes_.size(), false);
  live[root] = true;
  for (std::size_t i = root + 1; i-- > 0;) {
    if (!live[i]) continue;
    const int k = arity(nodes_[i].kind);
    if (k >= 1) live[nodes_[i].a] = true;
    if (k >= 2) live[nodes_[i].b] = true;
  }
  return live;
}

void ExprGraph::evaluate(std::size_t root, const Bindings& bindings, Evaluation& ev) const {
  const std::size_t count = root + 1;
  ev.live = reachable_from(root);
  ev.value.assign(count, nullptr);
  ev.owned.assign(count, DenseMat());
  ev.sparse.assign(count, nullptr);
  ev.aux_a.assign(count, DenseMat());
  ev.aux_b.assign(count, DenseMat());

  auto fail_shape = [&](std::size_t id, const std::string& what) {
    throw ShapeError("shape mismatch at " + describe(id) + ": " + what);
  };

  for (std::size_t id = 0; id < count; ++id) {
    if (!ev.live[id]) continue;
    const Node& n = nodes_[id];
    DenseMat& out = ev.owned[id];
    const DenseMat* A = arity(n.kind) >= 1 && n.kind != OpKind::kSpMM ? ev.value[n.a] : nullptr;
    const DenseMat* B = arity(n.kind) >= 2 ? ev.value[n.b] : nullptr;

    switch (n.kind) {
      case OpKind::kInput: {
        const DenseMat* bound = bindings.dense(n.name);
        if (bound == nullptr) {
          throw std::invalid_argument("unbound input at " + describe(id));
        }
        if (!bound->all_finite()) {
          throw NonFiniteError("non-finite value bound to input '" + n.name + "'");
        }
        ev.value[id] = bound;
        continue;
      }
      case OpKind::kSparseInput: {
        const SparseMat* bound = bindings.sparse(n.name);
        if (bound == nullptr) {
          throw std::invalid_argument("unbound sparse input at " + describe(id));
        }
        ev.sparse[id] = bound;
        continue;
      }
      case OpKind::kConstant:
        ev.value[id] = n.constant.get();
        continue;
      case OpKind::kMatMul:
        if (A->cols() != B->rows()) fail_shape(id, A->shape_string() + " * " + B->shape_string());
        out = fairdistill::matmul(*A, *B);
        break;
      case OpKind::kSpMM: {
        const SparseMat* S = ev.sparse[n.a];
        const DenseMat* D = ev.value[n.b];
        if (S->cols() != D->rows()) {
          fail_shape(id, std::to_string(S->rows()) + "x" + std::to_string(S->cols()) + " * " +
                             D->shape_string());
        }
        out = S->multiply(*D);
        break;
      }
      case OpKind::kAdd:
      case OpKind::kSub:
      case OpKind::kMul: {
        if (!A->same_shape(*B)) fail_shape(id, A->shape_string() + " vs " + B->shape_string());
        out = *A;
        auto& o = out.data();
        const auto& b = B->data();
        if (n.kind == OpKind::kAdd) {
          for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i];
        } else if (n.kind == OpKind::kSub) {
          for (std::size_t i = 0; i < o.size(); ++i) o[i] -= b[i];
        } else {
          for (std::size_t i = 0; i < o.size(); ++i) o[i] *= b[i];
        }
        break;
      }
      case OpKind::kScale:
        out = *A;
        for (double& v : out.data()) v *= n.scalar;
        break;
      case OpKind::kAddRow:
        if (B->rows() != 1 || B->cols() != A->cols()) {
          fail_shape(id, A->shape_string() + " + row " + B->shape_string());
        }
        out = *A;
        for (std::size_t i = 0; i < out.rows(); ++i) {
          auto r = out.row(i);
          for (std::size_t j = 0; j < r.size(); ++j) r[j] += (*B)(0, j);
        }
        break;
      case OpKind::kRelu:
        out = *A;
        for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
        break;
      case OpKind::kSoftmax:
        if (A->cols() == 0) fail_shape(id, "softmax over zero columns");
        out = row_softmax(*A);
        break;
      case OpKind::kLogSoftmax:
        if (A->cols() == 0) fail_shape(id, "log_softmax over zero columns");
        log_softmax_rows(*A, out);
        break;
      case OpKind::kLog:
        out = *A;
        for (double& v : out.data()) {
          if (!(v > 0.0)) throw NonFiniteError("log of non-positive value at " + describe(id));
          v = std::log(v);
        }
        break;
      case OpKind::kAbs:
        out = *A;
        for (double& v : out.data()) v = std::fabs(v);
        break;
      case OpKind::kGatherRows:
        for (std::size_t r : n.rows) {
          if (r >= A->rows()) fail_shape(id, "row index " + std::to_string(r) + " >= " + std::to_string(A->rows()));
        }
        out = fairdistill::gather_rows(*A, n.rows);
        break;
      case OpKind::kSubsetMean: {
        out = DenseMat(1, A->cols());
        for (std::size_t r : n.rows) {
          if (r >= A->rows()) fail_shape(id, "row index " + std::to_string(r) + " >= " + std::to_string(A->rows()));
          auto src = A->row(r);
          for (std::size_t j = 0; j < src.size(); ++j) out(0, j) += src[j];
        }
        const double inv = 1.0 / static_cast<double>(n.rows.size());
        for (double& v : out.data()) v *= inv;
        break;
      }
      case OpKind::kSum:
      case OpKind::kMean: {
        double acc = 0.0;
        for (double v : A->data()) acc += v;
        if (n.kind == OpKind::kMean) {
          if (A->size() == 0) fail_shape(id, "mean of empty matrix");
          acc /= static_cast<double>(A->size());
        }
        out = DenseMat(1, 1, acc);
        break;
      }
      case OpKind::kConcatCols:
        if (A->rows() != B->rows()) fail_shape(id, A->shape_string() + " | " + B->shape_string());
        out = hconcat(*A, *B);
        break;
      case OpKind::kRowSqDist:
      case OpKind::kRowCosDist:
      case OpKind::kRowKL: {
        if (!A->same_shape(*B)) fail_shape(id, A->shape_string() + " vs " + B->shape_string());
        out = DenseMat(A->rows(), 1);
        if (n.kind == OpKind::kRowSqDist) {
          for (std::size_t i = 0; i < A->rows(); ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < A->cols(); ++j) {
              const double d = (*A)(i, j) - (*B)(i, j);
              acc += d * d;
            }
            out(i, 0) = acc;
          }
        } else if (n.kind == OpKind::kRowCosDist) {
          for (std::size_t i = 0; i < A->rows(); ++i) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t j = 0; j < A->cols(); ++j) {
              dot += (*A)(i, j) * (*B)(i, j);
              na += (*A)(i, j) * (*A)(i, j);
              nb += (*B)(i, j) * (*B)(i, j);
            }
            out(i, 0) = (na == 0.0 || nb == 0.0) ? 1.0 : 1.0 - dot / std::sqrt(na * nb);
          }
        } else {
          log_softmax_rows(*A, ev.aux_a[id]);
          log_softmax_rows(*B, ev.aux_b[id]);
          const DenseMat& lp = ev.aux_a[id];
          const DenseMat& lq = ev.aux_b[id];
          for (std::size_t i = 0; i < A->rows(); ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < A->cols(); ++j) acc += std::exp(lp(i, j)) * (lp(i, j) - lq(i, j));
            out(i, 0) = acc;
          }
        }
        break;
      }
    }
    ev.value[id] = &out;
  }
}

DenseMat ExprGraph::forward(Var root, const Bindings& bindings) const {
  const std::size_t r = check(root);
  if (nodes_[r].kind == OpKind::kSparseInput) {
    return bindings.sparse(nodes_[r].name) ? bindings.sparse(nodes_[r].name)->to_dense()
                                           : throw std::invalid_argument("unbound sparse input at " + describe(r));
  }
  Evaluation ev;
  evaluate(r, bindings, ev);
  return *ev.value[r];
}

BackwardResult ExprGraph::backward(Var root, const Bindings& bindings) const {
  const std::size_t r = check(root);
  Evaluation ev;
  evaluate(r, bindings, ev);
  const DenseMat& out = *ev.value[r];
  if (out.rows() != 1 || out.cols() != 1) {
    throw NonScalarRootError("backward: root " + describe(r) + " is " + out.shape_string() +
                             ", expected 1x1");
  }

  const std::size_t count = r + 1;
  // A node needs a gradient when some dense input lies beneath it.
  std::vector<bool> needs(count, false);
  for (std::size_t id = 0; id < count; ++id) {
    if (!ev.live[id]) continue;
    const Node& n = nodes_[id];
    const int k = arity(n.kind);
    needs[id] = n.kind == OpKind::kInput || (k >= 1 && needs[n.a]) || (k >= 2 && needs[n.b]);
  }

  std::vector<DenseMat> grad(count);
  grad[r] = DenseMat(1, 1, 1.0);

  for (std::size_t id = count; id-- > 0;) {
    if (!ev.live[id] || !needs[id] || grad[id].empty()) continue;
    const Node& n = nodes_[id];
    const DenseMat& G = grad[id];
    const int k = arity(n.kind);
    const bool need_a = k >= 1 && needs[n.a];
    const bool need_b = k >= 2 && needs[n.b];
    const DenseMat* A = k >= 1 && n.kind != OpKind::kSpMM ? ev.value[n.a] : nullptr;
    const DenseMat* B = k >= 2 ? ev.value[n.b] : nullptr;
    const DenseMat& Y = *ev.value[id];

    switch (n.kind) {
      case OpKind::kInput:
      case OpKind::kSparseInput:
      case OpKind::kConstant:
        break;
      case OpKind::kMatMul:
        if (need_a) add_into(grad[n.a], matmul_nt(G, *B));
        if (need_b) add_into(grad[n.b], matmul_tn(*A, G));
        break;
      case OpKind::kSpMM:
        if (need_b) add_into(grad[n.b], ev.sparse[n.a]->transpose_multiply(G));
        break;
      case OpKind::kAdd:
        if (need_a) add_into(grad[n.a], G);
        if (need_b) add_into(grad[n.b], G);
        break;
      case OpKind::kSub:
        if (need_a) add_into(grad[n.a], G);
        if (need_b) {
          DenseMat g = G;
          for (double& v : g.data()) v = -v;
          add_into(grad[n.b], g);
        }
        break;
      case OpKind::kMul:
        if (need_a) {
          DenseMat g = G;
          for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= B->data()[i];
          add_into(grad[n.a], g);
        }
        if (need_b) {
          DenseMat g = G;
          for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= A->data()[i];
          add_into(grad[n.b], g);
        }
        break;
      case OpKind::kScale: {
        DenseMat g = G;
        for (double& v : g.data()) v *= n.scalar;
        add_into(grad[n.a], g);
        break;
      }
      case OpKind::kAddRow:
        if (need_a) add_into(grad[n.a], G);
        if (need_b) {
          DenseMat g(1, G.cols());
          for (std::size_t i = 0; i < G.rows(); ++i)
            for (std::size_t j = 0; j < G.cols(); ++j) g(0, j) += G(i, j);
          add_into(grad[n.b], g);
        }
        break;
      case OpKind::kRelu: {
        DenseMat g = G;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (!(A->data()[i] > 0.0)) g.data()[i] = 0.0;
        add_into(grad[n.a], g);
        break;
      }
      case OpKind::kSoftmax: {
        DenseMat g(G.rows(), G.cols());
        for (std::size_t i = 0; i < G.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < G.cols(); ++j) dot += G(i, j) * Y(i, j);
          for (std::size_t j = 0; j < G.cols(); ++j) g(i, j) = Y(i, j) * (G(i, j) - dot);
        }
        add_into(grad[n.a], g);
        break;
      }
      case OpKind::kLogSoftmax: {
        DenseMat g(G.rows(), G.cols());
        for (std::size_t i = 0; i < G.rows(); ++i) {
          double total = 0.0;
          for (std::size_t j = 0; j < G.cols(); ++j) total += G(i, j);
          for (std::size_t j = 0; j < G.cols(); ++j) g(i, j) = G(i, j) - std::exp(Y(i, j)) * total;
        }
        add_into(grad[n.a], g);
        break;
      }
      case OpKind::kLog: {
        DenseMat g = G;
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] /= A->data()[i];
        add_into(grad[n.a], g);
        break;
      }
      case OpKind::kAbs: {
        DenseMat g = G;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = A->data()[i];
          g.data()[i] *= x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        }
        add_into(grad[n.a], g);
        break;
      }
      case OpKind::kGatherRows: {
        DenseMat g(A->rows(), A->cols());
        for (std::size_t i = 0; i < n.rows.size(); ++i) {
          auto dst = g.row(n.rows[i]);
          auto src = G.row(i);
          for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
        add_into(grad[n.a], g);
        break;
      }
      case OpKind::kSubsetMean: {
        DenseMat g(A->rows(), A->cols());
        const double inv = 1.0 / static_cast<double>(n.rows.size());
        for (std::size_t r_idx : n.rows) {
          auto dst = g.row(r_idx);
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += G(0, j) * inv;
        }
        add_into(grad[n.a], g);
        break;
      }
      case OpKind::kSum:
      case OpKind::kMean: {
        double v = G(0, 0);
        if (n.kind == OpKind::kMean) v /= static_cast<double>(A->size());
        add_into(grad[n.a], DenseMat(A->rows(), A->cols(), v));
        break;
      }
      case OpKind::kConcatCols: {
        const std::size_t ca = A->cols();
        if (need_a) {
          DenseMat g(A->rows(), ca);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < ca; ++j) g(i, j) = G(i, j);
          add_into(grad[n.a], g);
        }
        if (need_b) {
          DenseMat g(B->rows(), B->cols());
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < B->cols(); ++j) g(i, j) = G(i, ca + j);
          add_into(grad[n.b], g);
        }
        break;
      }
      case OpKind::kRowSqDist: {
        DenseMat ga(A->rows(), A->cols());
        for (std::size_t i = 0; i < A->rows(); ++i)
          for (std::size_t j = 0; j < A->cols(); ++j) ga(i, j) = 2.0 * ((*A)(i, j) - (*B)(i, j)) * G(i, 0);
        if (need_b) {
          DenseMat gb = ga;
          for (double& v : gb.data()) v = -v;
          add_into(grad[n.b], gb);
        }
        if (need_a) add_into(grad[n.a], ga);
        break;
      }
      case OpKind::kRowCosDist: {
        DenseMat ga(A->rows(), A->cols()), gb(B->rows(), B->cols());
        for (std::size_t i = 0; i < A->rows(); ++i) {
          double dot = 0.0, na = 0.0, nb = 0.0;
          for (std::size_t j = 0; j < A->cols(); ++j) {
            dot += (*A)(i, j) * (*B)(i, j);
            na += (*A)(i, j) * (*A)(i, j);
            nb += (*B)(i, j) * (*B)(i, j);
          }
          if (na == 0.0 || nb == 0.0) continue;
          const double norm = std::sqrt(na * nb);
          const double cosv = dot / norm;
          for (std::size_t j = 0; j < A->cols(); ++j) {
            // d(1 - cos)/da = -(b / (|a||b|) - cos * a / |a|^2)
            ga(i, j) = -G(i, 0) * ((*B)(i, j) / norm - cosv * (*A)(i, j) / na);
            gb(i, j) = -G(i, 0) * ((*A)(i, j) / norm - cosv * (*B)(i, j) / nb);
          }
        }
        if (need_a) add_into(grad[n.a], ga);
        if (need_b) add_into(grad[n.b], gb);
        break;
      }
      case OpKind::kRowKL: {
        const DenseMat& lp = ev.aux_a[id];
        const DenseMat& lq = ev.aux_b[id];
        DenseMat ga(A->rows(), A->cols()), gb(B->rows(), B->cols());
        for (std::size_t i = 0; i < A->rows(); ++i) {
          const double kl = Y(i, 0);
          for (std::size_t j = 0; j < A->cols(); ++j) {
            const double p = std::exp(lp(i, j));
            const double q = std::exp(lq(i, j));
            ga(i, j) = G(i, 0) * p * ((lp(i, j) - lq(i, j)) - kl);
            gb(i, j) = G(i, 0) * (q - p);
          }
        }
        if (need_a) add_into(grad[n.a], ga);
        if (need_b) add_into(grad[n.b], gb);
        break;
      }
    }
    if (id != r && n.kind != OpKind::kInput) grad[id] = DenseMat();
  }

  BackwardResult result;
  result.value = out(0, 0);
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.kind != OpKind::kInput) continue;
    if (id < count && ev.live[id]) {
      // Inputs may appear as several nodes with the same name.
      DenseMat g = grad[id].empty() ? DenseMat(ev.value[id]->rows(), ev.value[id]->cols()) : grad[id];
      auto [it, inserted] = result.gradients.try_emplace(n.name, g);
      if (!inserted) add_into(it->second, g);
    } else if (const DenseMat* bound = bindings.dense(n.name)) {
      result.gradients.try_emplace(n.name, DenseMat(bound->rows(), bound->cols()));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Finite-difference check

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& [name, err] : max_relative_error) w = std::max(w, err);
  return w;
}

GradCheckReport gradient_check(const ExprGraph& graph, Var root, const Bindings& bindings,
                               const GradCheckOptions& options) {
  if (!(options.epsilon > 0.0)) {
    throw std::invalid_argument("gradient_check: epsilon must be positive");
  }
  const BackwardResult analytic = graph.backward(root, bindings);
  GradCheckReport report;
  for (const auto& [name, grad] : analytic.gradients) {
    const DenseMat* base = bindings.dense(name);
    double worst = 0.0;
    for (std::size_t i = 0; i < base->size(); ++i) {
      auto eval_at = [&](double delta) {
        DenseMat shifted = *base;
        shifted.data()[i] += delta;
        Bindings b = bindings;
        b.set(name, std::move(shifted));
        return graph.forward(root, b)(0, 0);
      };
      const double numeric = (eval_at(options.epsilon) - eval_at(-options.epsilon)) / (2.0 * options.epsilon);
      const double err = std::fabs(grad.data()[i] - numeric) / std::max(1.0, std::fabs(numeric));
      worst = std::max(worst, err);
    }
    report.max_relative_error[name] = worst;
    if (!(worst <= options.tolerance)) report.passed = false;
  }
  return report;
}

}  // namespace fairdistill::ad
