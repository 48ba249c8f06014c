#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "dpn/tensor.hpp"

namespace dpn {

enum class Precision { F64, F32 };

std::string_view precision_name(Precision p);
Precision parse_precision(std::string_view s);

/// Trainable tensor living outside any graph. `grad` accumulates across
/// graphs until `zero_grad()`. Row-sparse parameters (embedding tables) track
/// which rows received gradient so the optimizer can update lazily.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value, bool sparse = false);

  std::string name;
  Tensor value;
  Tensor grad;
  bool sparse = false;
  std::vector<std::size_t> touched_rows;

  void zero_grad();
  void mark_row(std::size_t row);
  std::size_t rows() const { return value.rank() ? value.dim(0) : 1; }
  std::size_t row_width() const { return value.rank() ? value.size() / value.dim(0) : 1; }

 private:
  std::vector<char> touched_mask_;
};

class Graph;

/// Handle to a node recorded on a Graph.
class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t rank() const { return value().rank(); }
  bool requires_grad() const;

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of one forward pass. Nodes are appended in execution order, so the
/// record is topologically sorted by construction; `backward` walks it once in
/// reverse. A Graph is single-writer and is dropped after its backward pass.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  explicit Graph(Precision precision = Precision::F64) : precision_(precision) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  /// Leaf that receives a gradient readable through `grad()`.
  Var leaf(Tensor t);
  /// Leaf aliasing `p.value` without copying; gradient accumulates into `p.grad`.
  Var param(Parameter& p);

  /// Reverse pass from a single-element loss.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  /// Gradient of a node after backward; zeros if no path reached it.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  Precision precision() const { return precision_; }

  /// Op-implementation interface.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);
  /// Gradient accumulator of node `id`, zero-allocated on first access.
  Tensor& grad_slot(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Piecewise-linear ops (relu, clamp) fold their region pattern into this
  /// signature when tracking is on; gradient checks use it to skip
  /// coordinates whose perturbation crosses a kink.
  void set_track_regions(bool on) { track_regions_ = on; }
  bool track_regions() const { return track_regions_; }
  void fold_region(std::uint64_t bits);
  std::uint64_t region_signature() const { return region_sig_; }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  void round_to_precision(Tensor& t) const;

  Precision precision_;
  std::deque<Node> nodes_;
  bool backward_done_ = false;
  bool track_regions_ = false;
  std::uint64_t region_sig_ = 1469598103934665603ULL;
};

}  // namespace dpn
