#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcmdpo/tensor.hpp"

namespace mcmdpo {

using NodeId = int32_t;

// Primitive kinds. `transpose` is part of the set because scaled
// dot-product attention needs Q K^T; see the attention builder in model.cpp.
enum class OpKind {
  constant,
  parameter,
  add,
  sub,
  mul,
  matmul,
  transpose,
  sum,
  mean,
  log,
  exp,
  sigmoid,
  log_softmax,
  gather_rows,
  concat,
  scale,
};

const char* op_kind_name(OpKind kind);

// Gradients keyed by parameter name. A parameter that never entered the
// graph (or was bound as a constant) has an implicit all-zero gradient.
class GradientMap {
 public:
  bool contains(const std::string& name) const { return grads_.count(name) != 0; }
  const Tensor* find(const std::string& name) const;
  Tensor get_or_zero(const std::string& name, const std::vector<int64_t>& shape) const;
  void set(const std::string& name, Tensor grad);
  void accumulate(const std::string& name, const Tensor& grad);
  size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::map<std::string, Tensor> grads_;
};

// Extra inputs for primitives that need them.
struct PrimitiveAttrs {
  double factor = 1.0;              // scale
  std::vector<int64_t> row_index;   // gather_rows
};

// Append-only computation record over Tensors. Forward values are cached
// eagerly at node creation; backward replays the record in reverse
// construction order (inputs always precede consumers). Binary elementwise
// ops accept equal shapes or a [1,c] second operand broadcast over the rows
// of a [r,c] first operand; no other broadcasting exists.
class Graph {
 public:
  NodeId constant(Tensor value);
  // Registers (or re-uses) a named parameter leaf. Re-registration with a
  // different value is an error.
  NodeId parameter(const std::string& name, Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId log(NodeId a);
  NodeId exp(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId log_softmax(NodeId a);  // row-wise over a matrix, max-subtracted
  NodeId gather_rows(NodeId a, std::vector<int64_t> rows);
  NodeId concat(const std::vector<NodeId>& parts);  // axis 0, matrices
  NodeId scale(NodeId a, double factor);

  // Generic entry point; the named builders above all land here.
  NodeId apply_primitive(OpKind kind, const std::vector<NodeId>& inputs,
                         const PrimitiveAttrs& attrs = {});

  const Tensor& value(NodeId id) const;
  size_t size() const { return nodes_.size(); }
  bool has_parameter(const std::string& name) const { return param_ids_.count(name) != 0; }

  // Reverse accumulation from a scalar root. Pure: repeated calls on the
  // same graph return identical maps.
  GradientMap backward(NodeId root) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;
    PrimitiveAttrs attrs;
    std::string param_name;
  };

  const Node& node(NodeId id) const;
  NodeId push(Node n);
  Tensor eval(OpKind kind, const std::vector<NodeId>& inputs, const PrimitiveAttrs& attrs) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_ids_;
};

}  // namespace mcmdpo
