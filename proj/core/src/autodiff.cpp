#include "fedsim/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fedsim::ad {

namespace {

[[noreturn]] void shape_fail(Op op, const std::string& detail) {
  throw ShapeError(std::string(op_name(op)) + ": " + detail);
}

[[noreturn]] void shape_fail(Op op, const Shape& a, const Shape& b) {
  shape_fail(op, "incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Views any rank <= 2 shape as (rows, cols); vectors are single rows.
struct Dims2 {
  std::size_t rows;
  std::size_t cols;
};

Dims2 as_2d(const Shape& s) {
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  return {s[0], s[1]};
}

// True when `small` can broadcast to `big` under the explicit rules of
// sum_to/broadcast_to: scalar, or same rank with each dim equal or 1.
bool broadcastable(const Shape& small, const Shape& big) {
  if (small.empty()) return true;
  if (small.size() != big.size()) return false;
  for (std::size_t d = 0; d < small.size(); ++d) {
    if (small[d] != big[d] && small[d] != 1) return false;
  }
  return true;
}

Tensor elementwise(const Tensor& a, const Tensor& b, Op op) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  switch (op) {
    case Op::add:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      break;
    case Op::sub:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
      break;
    case Op::mul:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      break;
    default:
      throw std::logic_error("elementwise: unsupported op");
  }
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.rows();
  const std::size_t cols = logits.cols();
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, logits.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = std::exp(logits.at(r, c) - mx);
      out.at(r, c) = e;
      z += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= z;
  }
  return out;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scalar_mul: return "scalar_mul";
    case Op::relu: return "relu";
    case Op::tanh: return "tanh";
    case Op::softmax: return "softmax";
    case Op::softmax_cross_entropy: return "softmax_cross_entropy";
    case Op::sum_to: return "sum_to";
    case Op::broadcast_to: return "broadcast_to";
    case Op::index_select: return "index_select";
    case Op::index_add: return "index_add";
    case Op::transpose: return "transpose";
    case Op::reshape: return "reshape";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph_->node(id_).value; }

bool Var::requires_grad() const { return graph_->node(id_).requires_grad; }

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite constant value");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::variable(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite variable value");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::record(Op op, std::span<const Var> inputs, Tensor value, NodeAux aux) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op_name(op)) + ": produced non-finite value for shape " +
                       shape_str(value.shape()));
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.aux = std::move(aux);
  bool req = false;
  for (const Var& in : inputs) {
    if (&in.graph() != this) throw std::invalid_argument("ad: inputs belong to different graphs");
    req = req || in.requires_grad();
  }
  if (grad_enabled_ && req) {
    n.requires_grad = true;
    n.num_inputs = static_cast<std::uint8_t>(inputs.size());
    if (!inputs.empty()) n.input0 = inputs[0].id();
    if (inputs.size() > 1) n.input1 = inputs[1].id();
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows()) {
    shape_fail(Op::matmul, x.shape(), y.shape());
  }
  const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
  Tensor out(Shape{m, n});
  auto xo = x.data();
  auto yo = y.data();
  auto o = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = xo[i * k + p];
      if (xv == 0.0) continue;
      const double* yrow = &yo[p * n];
      double* orow = &o[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
    }
  }
  const Var in[] = {a, b};
  return a.graph().record(Op::matmul, in, std::move(out));
}

Var add(Var a, Var b) {
  const Var in[] = {a, b};
  return a.graph().record(Op::add, in, elementwise(a.value(), b.value(), Op::add));
}

Var sub(Var a, Var b) {
  const Var in[] = {a, b};
  return a.graph().record(Op::sub, in, elementwise(a.value(), b.value(), Op::sub));
}

Var mul(Var a, Var b) {
  const Var in[] = {a, b};
  return a.graph().record(Op::mul, in, elementwise(a.value(), b.value(), Op::mul));
}

Var scalar_mul(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  NodeAux aux;
  aux.scalar = c;
  const Var in[] = {a};
  return a.graph().record(Op::scalar_mul, in, std::move(out), std::move(aux));
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const Var in[] = {a};
  return a.graph().record(Op::relu, in, std::move(out));
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  const Var in[] = {a};
  return a.graph().record(Op::tanh, in, std::move(out));
}

Var softmax(Var logits) {
  if (logits.value().rank() != 2) shape_fail(Op::softmax, "expected matrix, got " + shape_str(logits.shape()));
  const Var in[] = {logits};
  return logits.graph().record(Op::softmax, in, softmax_rows(logits.value()));
}

Var softmax_cross_entropy(Var logits, std::shared_ptr<const std::vector<int>> labels) {
  const Tensor& x = logits.value();
  if (x.rank() != 2) shape_fail(Op::softmax_cross_entropy, "expected matrix, got " + shape_str(x.shape()));
  if (!labels || labels->size() != x.rows()) {
    shape_fail(Op::softmax_cross_entropy,
               "logits " + shape_str(x.shape()) + " vs " +
                   std::to_string(labels ? labels->size() : 0) + " labels");
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = (*labels)[r];
    if (y < 0 || static_cast<std::size_t>(y) >= cols) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) +
                                  " out of range [0," + std::to_string(cols) + ")");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, x.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x.at(r, c) - mx);
    total += std::log(z) + mx - x.at(r, static_cast<std::size_t>(y));
  }
  NodeAux aux;
  aux.labels = std::move(labels);
  const Var in[] = {logits};
  return logits.graph().record(Op::softmax_cross_entropy, in,
                               Tensor::scalar(total / static_cast<double>(rows)), std::move(aux));
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
  return softmax_cross_entropy(logits, std::make_shared<const std::vector<int>>(labels));
}

Var sum_to(Var a, Shape shape) {
  const Tensor& x = a.value();
  if (!broadcastable(shape, x.shape())) shape_fail(Op::sum_to, x.shape(), shape);
  Tensor out(shape);
  const Dims2 src = as_2d(x.shape());
  const Dims2 dst = as_2d(shape);
  for (std::size_t r = 0; r < src.rows; ++r) {
    const std::size_t orow = dst.rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < src.cols; ++c) {
      const std::size_t ocol = dst.cols == 1 ? 0 : c;
      out[orow * dst.cols + ocol] += x[r * src.cols + c];
    }
  }
  NodeAux aux;
  aux.shape = std::move(shape);
  const Var in[] = {a};
  return a.graph().record(Op::sum_to, in, std::move(out), std::move(aux));
}

Var broadcast_to(Var a, Shape shape) {
  const Tensor& x = a.value();
  if (!broadcastable(x.shape(), shape)) shape_fail(Op::broadcast_to, x.shape(), shape);
  Tensor out(shape);
  const Dims2 src = as_2d(x.shape());
  const Dims2 dst = as_2d(shape);
  for (std::size_t r = 0; r < dst.rows; ++r) {
    const std::size_t irow = src.rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < dst.cols; ++c) {
      const std::size_t icol = src.cols == 1 ? 0 : c;
      out[r * dst.cols + c] = x[irow * src.cols + icol];
    }
  }
  NodeAux aux;
  aux.shape = std::move(shape);
  const Var in[] = {a};
  return a.graph().record(Op::broadcast_to, in, std::move(out), std::move(aux));
}

Var sum(Var a) { return sum_to(a, Shape{}); }

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scalar_mul(sum(a), 1.0 / n);
}

Var index_select(Var a, std::shared_ptr<const std::vector<std::size_t>> indices) {
  const Tensor& x = a.value();
  if (!indices) throw std::invalid_argument("index_select: null indices");
  if (x.rank() == 0) shape_fail(Op::index_select, "cannot index a scalar");
  const std::size_t extent = x.shape()[0];
  const std::size_t width = x.rank() == 2 ? x.cols() : 1;
  Shape out_shape = x.rank() == 2 ? Shape{indices->size(), width} : Shape{indices->size()};
  Tensor out(out_shape);
  for (std::size_t i = 0; i < indices->size(); ++i) {
    const std::size_t src = (*indices)[i];
    if (src >= extent) {
      shape_fail(Op::index_select, "index " + std::to_string(src) + " out of range for shape " +
                                       shape_str(x.shape()));
    }
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(src * width), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  NodeAux aux;
  aux.indices = std::move(indices);
  const Var in[] = {a};
  return a.graph().record(Op::index_select, in, std::move(out), std::move(aux));
}

Var index_add(Var a, std::shared_ptr<const std::vector<std::size_t>> indices, Shape shape) {
  const Tensor& x = a.value();
  if (!indices) throw std::invalid_argument("index_add: null indices");
  if (shape.empty() || shape.size() != x.rank() || x.shape()[0] != indices->size() ||
      (shape.size() == 2 && shape[1] != x.cols())) {
    shape_fail(Op::index_add, x.shape(), shape);
  }
  const std::size_t width = shape.size() == 2 ? shape[1] : 1;
  Tensor out(shape);
  for (std::size_t i = 0; i < indices->size(); ++i) {
    const std::size_t dst = (*indices)[i];
    if (dst >= shape[0]) {
      shape_fail(Op::index_add, "index " + std::to_string(dst) + " out of range for shape " +
                                    shape_str(shape));
    }
    for (std::size_t c = 0; c < width; ++c) out[dst * width + c] += x[i * width + c];
  }
  NodeAux aux;
  aux.shape = std::move(shape);
  aux.indices = std::move(indices);
  const Var in[] = {a};
  return a.graph().record(Op::index_add, in, std::move(out), std::move(aux));
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) shape_fail(Op::transpose, "expected matrix, got " + shape_str(x.shape()));
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  const Var in[] = {a};
  return a.graph().record(Op::transpose, in, std::move(out));
}

Var reshape(Var a, Shape shape) {
  const Tensor& x = a.value();
  if (shape_numel(shape) != x.size()) shape_fail(Op::reshape, x.shape(), shape);
  Tensor out(shape, x.values());
  NodeAux aux;
  aux.shape = std::move(shape);
  const Var in[] = {a};
  return a.graph().record(Op::reshape, in, std::move(out), std::move(aux));
}

std::vector<Var> backward(Var root, std::span<const Var> wrt, bool create_graph) {
  if (!root.valid()) throw std::invalid_argument("backward: invalid root");
  Graph& g = root.graph();
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " +
                     shape_str(root.shape()));
  }
  const std::uint32_t root_id = root.id();

  // Restrict the sweep to nodes lying on a path from some wrt node to root.
  std::uint32_t lo = root_id + 1;
  std::vector<char> needed(root_id + 1, 0);
  for (const Var& w : wrt) {
    if (&w.graph() != &g) throw std::invalid_argument("backward: wrt node from another graph");
    if (w.id() <= root_id && w.requires_grad()) {
      needed[w.id()] = 1;
      lo = std::min(lo, w.id());
    }
  }
  for (std::uint32_t id = lo; id <= root_id; ++id) {
    const Node& n = g.node(id);
    if (needed[id] || !n.requires_grad) continue;
    if ((n.num_inputs > 0 && n.input0 >= lo && needed[n.input0]) ||
        (n.num_inputs > 1 && n.input1 >= lo && needed[n.input1])) {
      needed[id] = 1;
    }
  }

  std::vector<Var> grads(root_id + 1);
  Graph::GradModeGuard mode(g, create_graph);

  auto accumulate = [&](std::uint32_t id, Var contribution) {
    grads[id] = grads[id].valid() ? add(grads[id], contribution) : contribution;
  };

  if (needed[root_id]) grads[root_id] = g.constant(Tensor(root.shape(), 1.0));

  for (std::uint32_t id = root_id + 1; id-- > lo;) {
    if (!needed[id] || !grads[id].valid()) continue;
    // std::deque keeps `n` valid while the rules below append nodes.
    const Node& n = g.node(id);
    const Op op = n.op;
    const NodeAux aux = n.aux;
    const Var self(&g, id);
    const Var gout = grads[id];
    const Var a = n.num_inputs > 0 ? Var(&g, n.input0) : Var();
    const Var b = n.num_inputs > 1 ? Var(&g, n.input1) : Var();
    const bool need_a = a.valid() && a.id() >= lo && needed[a.id()];
    const bool need_b = b.valid() && b.id() >= lo && needed[b.id()];
    if (!need_a && !need_b) continue;

    switch (op) {
      case Op::leaf:
        break;
      case Op::matmul:
        if (need_a) accumulate(a.id(), matmul(gout, transpose(b)));
        if (need_b) accumulate(b.id(), matmul(transpose(a), gout));
        break;
      case Op::add:
        if (need_a) accumulate(a.id(), gout);
        if (need_b) accumulate(b.id(), gout);
        break;
      case Op::sub:
        if (need_a) accumulate(a.id(), gout);
        if (need_b) accumulate(b.id(), scalar_mul(gout, -1.0));
        break;
      case Op::mul:
        if (need_a) accumulate(a.id(), mul(gout, b));
        if (need_b) accumulate(b.id(), mul(gout, a));
        break;
      case Op::scalar_mul:
        accumulate(a.id(), scalar_mul(gout, aux.scalar));
        break;
      case Op::relu: {
        Tensor mask = a.value();
        for (double& v : mask.data()) v = v > 0.0 ? 1.0 : 0.0;
        accumulate(a.id(), mul(gout, g.constant(std::move(mask))));
        break;
      }
      case Op::tanh: {
        const Var ones = g.constant(Tensor(self.shape(), 1.0));
        accumulate(a.id(), mul(gout, sub(ones, mul(self, self))));
        break;
      }
      case Op::softmax: {
        const Shape& s = self.shape();
        const Var dot = sum_to(mul(gout, self), Shape{s[0], 1});
        accumulate(a.id(), mul(self, sub(gout, broadcast_to(dot, s))));
        break;
      }
      case Op::softmax_cross_entropy: {
        const Shape s = a.shape();
        Tensor onehot(s);
        for (std::size_t r = 0; r < s[0]; ++r) {
          onehot.at(r, static_cast<std::size_t>((*aux.labels)[r])) = 1.0;
        }
        const Var diff = sub(softmax(a), g.constant(std::move(onehot)));
        const Var scaled = scalar_mul(diff, 1.0 / static_cast<double>(s[0]));
        accumulate(a.id(), mul(broadcast_to(gout, s), scaled));
        break;
      }
      case Op::sum_to:
        accumulate(a.id(), broadcast_to(gout, a.shape()));
        break;
      case Op::broadcast_to:
        accumulate(a.id(), sum_to(gout, a.shape()));
        break;
      case Op::index_select:
        accumulate(a.id(), index_add(gout, aux.indices, a.shape()));
        break;
      case Op::index_add:
        accumulate(a.id(), index_select(gout, aux.indices));
        break;
      case Op::transpose:
        accumulate(a.id(), transpose(gout));
        break;
      case Op::reshape:
        accumulate(a.id(), reshape(gout, a.shape()));
        break;
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() <= root_id && grads[w.id()].valid()) {
      out.push_back(grads[w.id()]);
    } else {
      out.push_back(g.constant(Tensor(w.shape(), 0.0)));
    }
  }
  return out;
}

std::vector<Tensor> gradients(Var root, std::span<const Var> wrt) {
  std::vector<Tensor> out;
  for (const Var& v : backward(root, wrt, false)) out.push_back(v.value());
  return out;
}

}  // namespace fedsim::ad
