#include "dpn/autograd.hpp"

#include <algorithm>

#include "dpn/error.hpp"

namespace dpn {

std::string_view precision_name(Precision p) { return p == Precision::F64 ? "f64" : "f32"; }

Precision parse_precision(std::string_view s) {
  if (s == "f64") return Precision::F64;
  if (s == "f32") return Precision::F32;
  throw ConfigError("precision must be \"f64\" or \"f32\", got \"" + std::string(s) + "\"");
}

Parameter::Parameter(std::string name_, Tensor value_, bool sparse_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), sparse(sparse_) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  if (!sparse) {
    grad.fill(0.0);
    return;
  }
  const std::size_t w = row_width();
  for (auto r : touched_rows) {
    std::fill_n(grad.ptr() + r * w, w, 0.0);
    touched_mask_[r] = 0;
  }
  touched_rows.clear();
}

void Parameter::mark_row(std::size_t row) {
  if (touched_mask_.size() != rows()) touched_mask_.assign(rows(), 0);
  if (!touched_mask_[row]) {
    touched_mask_[row] = 1;
    touched_rows.push_back(row);
  }
}

const Tensor& Var::value() const { return graph_->value(*this); }
bool Var::requires_grad() const { return graph_->requires_grad(*this); }

Var Graph::constant(Tensor t) {
  round_to_precision(t);
  Node n;
  n.op = "constant";
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::leaf(Tensor t) {
  round_to_precision(t);
  Node n;
  n.op = "leaf";
  n.value = std::move(t);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(Parameter& p) {
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
  Node n;
  n.op = "param";
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::value(Var v) const {
  const Node& n = nodes_.at(v.id());
  return n.external ? *n.external : n.value;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.param) return n.param->grad;
  if (n.has_grad) return n.grad;
  return Tensor(value(v).shape());
}

bool Graph::requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

Var Graph::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Graph::record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  if (backward_done_) throw UsageError("graph: cannot record '" + std::string(op) + "' after backward");
  round_to_precision(value);
#ifndef NDEBUG
  value.check_finite(op);
#endif
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw UsageError("graph: '" + std::string(op) + "' mixes nodes of different graphs");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad;
  if (!n.has_grad) {
    n.grad = Tensor(value(Var(this, id)).shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw UsageError("backward: loss belongs to another graph");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw UsageError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
  if (backward_done_) throw UsageError("backward: graph already consumed");
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_slot(loss.id())[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
    // Activations and closures are no longer needed once propagated.
    n.backward = nullptr;
  }
}

void Graph::fold_region(std::uint64_t bits) {
  region_sig_ ^= bits;
  region_sig_ *= 1099511628211ULL;
}

void Graph::round_to_precision(Tensor& t) const {
  if (precision_ != Precision::F32) return;
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace dpn
