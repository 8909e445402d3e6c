#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mufasa/tensor.hpp"

namespace mufasa {

/// A learnable tensor. Gradients are written by Tape::backward and consumed
/// by an optimizer; they never accumulate across tapes. A second backward
/// that reaches a parameter whose grad is still populated throws a
/// stale-gradient error, so callers must zero_grads() between steps.
struct Parameter {
  std::string name;
  Tensor value;
  std::optional<Tensor> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}
};

void zero_grads(std::span<Parameter* const> params);

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  // Invalidated when further ops are recorded on the tape; copy to keep.
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct TapeCounters {
  // Query-key score entries computed by attention primitives.
  std::size_t score_pairs = 0;
};

/// Records primitive ops in execution order; backward() walks them once in
/// reverse. One tape per thread; a tape can be differentiated once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to p. Repeated calls with the same parameter return the same leaf.
  Var parameter(Parameter& p);

  // Appends a node whose gradient flows to `inputs` through `backward`.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }

  // Accumulates into the gradient buffer of v (allocated on first use).
  void accumulate(Var v, const Tensor& g);
  // Zero-initialized gradient buffer of v for in-place accumulation.
  Tensor& grad_buffer(Var v);

  /// Reverse pass from a scalar loss. Populates Parameter::grad for every
  /// reachable parameter. Throws a rank error for a non-scalar loss.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  TapeCounters& counters() noexcept { return counters_; }
  const TapeCounters& counters() const noexcept { return counters_; }

  // Observer invoked with the node id of every op visited by backward().
  void set_visit_observer(std::function<void(std::size_t)> observer) {
    visit_observer_ = std::move(observer);
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, std::size_t> param_index_;
  TapeCounters counters_;
  std::function<void(std::size_t)> visit_observer_;
  bool consumed_ = false;
};

// ---- primitives ---------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
// Elementwise a + b; b may also be a 1×cols row broadcast over a's rows.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var square(Var a);
Var tanh(Var a);
Var sum(Var a);
Var mean(Var a);
// Column means: r×c -> 1×c.
Var mean_rows(Var a);
Var reshape(Var a, std::size_t rows, std::size_t cols);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
// Means over consecutive row ranges [begin, end): r×c -> ranges×c.
Var segment_mean(Var a, std::span<const std::pair<std::size_t, std::size_t>> ranges);
// Row-wise inner products of two same-shape matrices: r×c -> r×1.
Var row_dot(Var a, Var b);
// Each row scaled to unit L2 norm. Zero rows raise a zero-norm error.
Var normalize_rows(Var a);
Var softmax_rows(Var scores);

/// Row softmax of (scores + mask), mask entries 0 or -inf. Row-max
/// stabilized; masked entries get weight exactly 0. A row with no finite
/// entry raises a degenerate-row error.
Var masked_softmax(Var scores, const Tensor& mask);
Tensor masked_softmax(const Tensor& scores, const Tensor& mask);

// Mean over rows of -log softmax(logits_i)[targets_i].
Var cross_entropy_rows(Var logits, std::span<const std::size_t> targets);

/// Single-query scaled dot-product attention, softmax(q·Kᵀ/√d + mask)·V with
/// K = rows·Wk and V = rows·Wv. Evaluated as ((q·Wkᵀ)·rowsᵀ) and
/// ((weights·rows)·Wv) so cost is linear in the number of rows. Adds the
/// number of score entries to the tape counters.
struct AttentionResult {
  Var output;    // 1×d
  Var weights;   // 1×n
};
AttentionResult attend(Var query, Var rows, Var key_proj, Var value_proj,
                       const Tensor* mask = nullptr);

// Value-only evaluation of a scalar function built on a fresh tape.
double evaluate_scalar(const std::function<Var(Tape&)>& build);

}  // namespace mufasa
