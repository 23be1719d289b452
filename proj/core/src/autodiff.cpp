#include "mcmdpo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mcmdpo {

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::concat: return "concat";
    case OpKind::scale: return "scale";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
  throw std::invalid_argument(std::string("graph: ") + op_kind_name(kind) + ": " + detail);
}

// Equal shapes, or b == [1, cols(a)] broadcast over rows of a.
bool broadcasts_rows(const Tensor& a, const Tensor& b) {
  return a.is_matrix() && b.is_matrix() && b.rows() == 1 && b.cols() == a.cols();
}

void check_elementwise(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.same_shape(b) || broadcasts_rows(a, b)) return;
  shape_error(kind, "shapes " + a.shape_str() + " and " + b.shape_str() + " do not conform");
}

}  // namespace

const Tensor* GradientMap::find(const std::string& name) const {
  auto it = grads_.find(name);
  return it == grads_.end() ? nullptr : &it->second;
}

Tensor GradientMap::get_or_zero(const std::string& name, const std::vector<int64_t>& shape) const {
  if (const Tensor* t = find(name)) {
    if (t->shape() != shape) {
      throw std::logic_error("GradientMap: gradient shape " + t->shape_str() +
                             " mismatches parameter " + name + " shape " +
                             shape_to_string(shape));
    }
    return *t;
  }
  return Tensor::zeros(shape);
}

void GradientMap::set(const std::string& name, Tensor grad) { grads_[name] = std::move(grad); }

void GradientMap::accumulate(const std::string& name, const Tensor& grad) {
  auto it = grads_.find(name);
  if (it == grads_.end()) {
    grads_.emplace(name, grad);
    return;
  }
  if (!it->second.same_shape(grad)) {
    throw std::logic_error("GradientMap: accumulate shape mismatch for " + name);
  }
  for (int64_t i = 0; i < grad.numel(); ++i) it->second[i] += grad[i];
}

NodeId Graph::constant(Tensor value) {
  return push({OpKind::constant, {}, std::move(value), {}, {}});
}

NodeId Graph::parameter(const std::string& name, Tensor value) {
  auto it = param_ids_.find(name);
  if (it != param_ids_.end()) {
    if (!(nodes_[static_cast<size_t>(it->second)].value == value)) {
      throw std::invalid_argument("graph: parameter '" + name +
                                  "' re-registered with a different value");
    }
    return it->second;
  }
  NodeId id = push({OpKind::parameter, {}, std::move(value), {}, name});
  param_ids_.emplace(name, id);
  return id;
}

NodeId Graph::add(NodeId a, NodeId b) { return apply_primitive(OpKind::add, {a, b}); }
NodeId Graph::sub(NodeId a, NodeId b) { return apply_primitive(OpKind::sub, {a, b}); }
NodeId Graph::mul(NodeId a, NodeId b) { return apply_primitive(OpKind::mul, {a, b}); }
NodeId Graph::matmul(NodeId a, NodeId b) { return apply_primitive(OpKind::matmul, {a, b}); }
NodeId Graph::transpose(NodeId a) { return apply_primitive(OpKind::transpose, {a}); }
NodeId Graph::sum(NodeId a) { return apply_primitive(OpKind::sum, {a}); }
NodeId Graph::mean(NodeId a) { return apply_primitive(OpKind::mean, {a}); }
NodeId Graph::log(NodeId a) { return apply_primitive(OpKind::log, {a}); }
NodeId Graph::exp(NodeId a) { return apply_primitive(OpKind::exp, {a}); }
NodeId Graph::sigmoid(NodeId a) { return apply_primitive(OpKind::sigmoid, {a}); }
NodeId Graph::log_softmax(NodeId a) { return apply_primitive(OpKind::log_softmax, {a}); }

NodeId Graph::gather_rows(NodeId a, std::vector<int64_t> rows) {
  PrimitiveAttrs attrs;
  attrs.row_index = std::move(rows);
  return apply_primitive(OpKind::gather_rows, {a}, attrs);
}

NodeId Graph::concat(const std::vector<NodeId>& parts) {
  return apply_primitive(OpKind::concat, parts);
}

NodeId Graph::scale(NodeId a, double factor) {
  PrimitiveAttrs attrs;
  attrs.factor = factor;
  return apply_primitive(OpKind::scale, {a}, attrs);
}

NodeId Graph::apply_primitive(OpKind kind, const std::vector<NodeId>& inputs,
                              const PrimitiveAttrs& attrs) {
  if (kind == OpKind::constant || kind == OpKind::parameter) {
    throw std::invalid_argument("graph: leaves are created via constant()/parameter()");
  }
  for (NodeId id : inputs) node(id);  // bounds check
  Tensor out = eval(kind, inputs, attrs);
  if (!out.all_finite()) {
    throw std::domain_error(std::string("graph: ") + op_kind_name(kind) +
                            " produced a non-finite value");
  }
  return push({kind, inputs, std::move(out), attrs, {}});
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }

const Graph::Node& Graph::node(NodeId id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
    throw std::out_of_range("graph: bad node id " + std::to_string(id));
  }
  return nodes_[static_cast<size_t>(id)];
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor Graph::eval(OpKind kind, const std::vector<NodeId>& in, const PrimitiveAttrs& attrs) const {
  auto arity = [&](size_t want) {
    if (in.size() != want) {
      shape_error(kind, "expected " + std::to_string(want) + " inputs, got " +
                            std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul: {
      arity(2);
      const Tensor& a = value(in[0]);
      const Tensor& b = value(in[1]);
      check_elementwise(kind, a, b);
      Tensor out = a;
      const bool bcast = !a.same_shape(b);
      const int64_t bs = b.numel();
      for (int64_t i = 0; i < out.numel(); ++i) {
        const double bv = b[bcast ? i % bs : i];
        if (kind == OpKind::add) out[i] += bv;
        else if (kind == OpKind::sub) out[i] -= bv;
        else out[i] *= bv;
      }
      return out;
    }
    case OpKind::matmul: {
      arity(2);
      const Tensor& a = value(in[0]);
      const Tensor& b = value(in[1]);
      if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.rows()) {
        shape_error(kind, "shapes " + a.shape_str() + " x " + b.shape_str() + " do not conform");
      }
      const int64_t m = a.rows(), k = a.cols(), n = b.cols();
      Tensor out = Tensor::zeros({m, n});
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
          const double av = a.at(i, p);
          if (av == 0.0) continue;
          for (int64_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
        }
      }
      return out;
    }
    case OpKind::transpose: {
      arity(1);
      const Tensor& a = value(in[0]);
      if (!a.is_matrix()) shape_error(kind, "needs a matrix, got " + a.shape_str());
      Tensor out = Tensor::zeros({a.cols(), a.rows()});
      for (int64_t i = 0; i < a.rows(); ++i)
        for (int64_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
      return out;
    }
    case OpKind::sum:
    case OpKind::mean: {
      arity(1);
      const Tensor& a = value(in[0]);
      double s = 0.0;
      for (int64_t i = 0; i < a.numel(); ++i) s += a[i];
      return Tensor::scalar(kind == OpKind::sum ? s : s / static_cast<double>(a.numel()));
    }
    case OpKind::log:
    case OpKind::exp:
    case OpKind::sigmoid: {
      arity(1);
      Tensor out = value(in[0]);
      for (int64_t i = 0; i < out.numel(); ++i) {
        const double v = out[i];
        if (kind == OpKind::log) out[i] = std::log(v);
        else if (kind == OpKind::exp) out[i] = std::exp(v);
        else out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      }
      return out;
    }
    case OpKind::log_softmax: {
      arity(1);
      const Tensor& a = value(in[0]);
      if (!a.is_matrix()) shape_error(kind, "needs a matrix, got " + a.shape_str());
      Tensor out = a;
      // Max subtraction keeps exp() in range; this is the one numerically
      // guarded primitive.
      for (int64_t r = 0; r < a.rows(); ++r) {
        double mx = a.at(r, 0);
        for (int64_t j = 1; j < a.cols(); ++j) mx = std::max(mx, a.at(r, j));
        double z = 0.0;
        for (int64_t j = 0; j < a.cols(); ++j) z += std::exp(a.at(r, j) - mx);
        const double log_z = std::log(z) + mx;
        for (int64_t j = 0; j < a.cols(); ++j) out.at(r, j) = a.at(r, j) - log_z;
      }
      return out;
    }
    case OpKind::gather_rows: {
      arity(1);
      const Tensor& a = value(in[0]);
      if (!a.is_matrix()) shape_error(kind, "needs a matrix, got " + a.shape_str());
      if (attrs.row_index.empty()) shape_error(kind, "empty row index");
      Tensor out = Tensor::zeros({static_cast<int64_t>(attrs.row_index.size()), a.cols()});
      for (size_t r = 0; r < attrs.row_index.size(); ++r) {
        const int64_t src = attrs.row_index[r];
        if (src < 0 || src >= a.rows()) {
          shape_error(kind, "row " + std::to_string(src) + " out of range for " + a.shape_str());
        }
        for (int64_t j = 0; j < a.cols(); ++j) out.at(static_cast<int64_t>(r), j) = a.at(src, j);
      }
      return out;
    }
    case OpKind::concat: {
      if (in.empty()) shape_error(kind, "needs at least one input");
      const Tensor& first = value(in[0]);
      if (!first.is_matrix()) shape_error(kind, "needs matrices, got " + first.shape_str());
      int64_t rows = 0;
      const int64_t cols = first.cols();
      for (NodeId id : in) {
        const Tensor& t = value(id);
        if (!t.is_matrix() || t.cols() != cols) {
          shape_error(kind, "column mismatch: " + first.shape_str() + " vs " + t.shape_str());
        }
        rows += t.rows();
      }
      Tensor out = Tensor::zeros({rows, cols});
      int64_t at_row = 0;
      for (NodeId id : in) {
        const Tensor& t = value(id);
        for (int64_t r = 0; r < t.rows(); ++r)
          for (int64_t j = 0; j < cols; ++j) out.at(at_row + r, j) = t.at(r, j);
        at_row += t.rows();
      }
      return out;
    }
    case OpKind::scale: {
      arity(1);
      Tensor out = value(in[0]);
      for (int64_t i = 0; i < out.numel(); ++i) out[i] *= attrs.factor;
      return out;
    }
    default:
      shape_error(kind, "not a primitive");
  }
}

GradientMap Graph::backward(NodeId root) const {
  const Node& r = node(root);
  if (r.value.numel() != 1) {
    throw std::invalid_argument("graph: backward root must be scalar, got shape " +
                                r.value.shape_str());
  }

  std::vector<Tensor> adj(nodes_.size());
  std::vector<char> touched(nodes_.size(), 0);
  auto bump = [&](NodeId id, int64_t flat, double v) {
    if (!touched[static_cast<size_t>(id)]) {
      adj[static_cast<size_t>(id)] = Tensor::zeros(nodes_[static_cast<size_t>(id)].value.shape());
      touched[static_cast<size_t>(id)] = 1;
    }
    adj[static_cast<size_t>(id)][flat] += v;
  };

  bump(root, 0, 1.0);

  for (NodeId id = root; id >= 0; --id) {
    if (!touched[static_cast<size_t>(id)]) continue;
    const Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor& g = adj[static_cast<size_t>(id)];
    switch (n.kind) {
      case OpKind::constant:
      case OpKind::parameter:
        break;
      case OpKind::add:
      case OpKind::sub: {
        const Tensor& b = value(n.inputs[1]);
        const double sign = n.kind == OpKind::add ? 1.0 : -1.0;
        for (int64_t i = 0; i < g.numel(); ++i) bump(n.inputs[0], i, g[i]);
        const int64_t bs = b.numel();
        for (int64_t i = 0; i < g.numel(); ++i) bump(n.inputs[1], i % bs, sign * g[i]);
        break;
      }
      case OpKind::mul: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        const int64_t bs = b.numel();
        for (int64_t i = 0; i < g.numel(); ++i) {
          bump(n.inputs[0], i, g[i] * b[i % bs]);
          bump(n.inputs[1], i % bs, g[i] * a[i]);
        }
        break;
      }
      case OpKind::matmul: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        const int64_t m = a.rows(), k = a.cols(), nn = b.cols();
        // dA = g B^T ; dB = A^T g
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (int64_t j = 0; j < nn; ++j) s += g.at(i, j) * b.at(p, j);
            bump(n.inputs[0], i * k + p, s);
          }
        }
        for (int64_t p = 0; p < k; ++p) {
          for (int64_t j = 0; j < nn; ++j) {
            double s = 0.0;
            for (int64_t i = 0; i < m; ++i) s += a.at(i, p) * g.at(i, j);
            bump(n.inputs[1], p * nn + j, s);
          }
        }
        break;
      }
      case OpKind::transpose: {
        const Tensor& a = value(n.inputs[0]);
        for (int64_t i = 0; i < a.rows(); ++i)
          for (int64_t j = 0; j < a.cols(); ++j) bump(n.inputs[0], i * a.cols() + j, g.at(j, i));
        break;
      }
      case OpKind::sum: {
        const Tensor& a = value(n.inputs[0]);
        for (int64_t i = 0; i < a.numel(); ++i) bump(n.inputs[0], i, g[0]);
        break;
      }
      case OpKind::mean: {
        const Tensor& a = value(n.inputs[0]);
        const double inv = 1.0 / static_cast<double>(a.numel());
        for (int64_t i = 0; i < a.numel(); ++i) bump(n.inputs[0], i, g[0] * inv);
        break;
      }
      case OpKind::log: {
        const Tensor& a = value(n.inputs[0]);
        for (int64_t i = 0; i < a.numel(); ++i) bump(n.inputs[0], i, g[i] / a[i]);
        break;
      }
      case OpKind::exp: {
        for (int64_t i = 0; i < g.numel(); ++i) bump(n.inputs[0], i, g[i] * n.value[i]);
        break;
      }
      case OpKind::sigmoid: {
        for (int64_t i = 0; i < g.numel(); ++i) {
          const double s = n.value[i];
          bump(n.inputs[0], i, g[i] * s * (1.0 - s));
        }
        break;
      }
      case OpKind::log_softmax: {
        const int64_t rows = n.value.rows(), cols = n.value.cols();
        for (int64_t r = 0; r < rows; ++r) {
          double gsum = 0.0;
          for (int64_t j = 0; j < cols; ++j) gsum += g.at(r, j);
          for (int64_t j = 0; j < cols; ++j) {
            bump(n.inputs[0], r * cols + j, g.at(r, j) - std::exp(n.value.at(r, j)) * gsum);
          }
        }
        break;
      }
      case OpKind::gather_rows: {
        const int64_t cols = n.value.cols();
        for (size_t r = 0; r < n.attrs.row_index.size(); ++r) {
          const int64_t src = n.attrs.row_index[r];
          for (int64_t j = 0; j < cols; ++j) {
            bump(n.inputs[0], src * cols + j, g.at(static_cast<int64_t>(r), j));
          }
        }
        break;
      }
      case OpKind::concat: {
        int64_t at_row = 0;
        const int64_t cols = n.value.cols();
        for (NodeId part : n.inputs) {
          const Tensor& t = value(part);
          for (int64_t r = 0; r < t.rows(); ++r)
            for (int64_t j = 0; j < cols; ++j) bump(part, r * cols + j, g.at(at_row + r, j));
          at_row += t.rows();
        }
        break;
      }
      case OpKind::scale: {
        for (int64_t i = 0; i < g.numel(); ++i) bump(n.inputs[0], i, g[i] * n.attrs.factor);
        break;
      }
    }
  }

  GradientMap out;
  for (const auto& [name, id] : param_ids_) {
    if (touched[static_cast<size_t>(id)]) out.set(name, adj[static_cast<size_t>(id)]);
  }
  return out;
}

}  // namespace mcmdpo
