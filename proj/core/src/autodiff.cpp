#include "mufasa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "mufasa/error.hpp"

namespace mufasa {

namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) fail(ErrorCode::kDimension, fmt::format("{}: operands on different tapes", op));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    fail(ErrorCode::kDimension,
         fmt::format("{} shape mismatch: {} vs {}", op, a.shape_string(), b.shape_string()));
  }
}

// Row softmax of scores + mask written into out. Returns false on a row with no finite entry.
void softmax_into(const Tensor& scores, const Tensor* mask, Tensor& out) {
  out = Tensor(scores.rows(), scores.cols());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < scores.cols(); ++c) {
      const double m = mask ? (*mask)(r, c) : 0.0;
      if (std::isinf(m)) continue;
      row_max = std::max(row_max, scores(r, c) + m);
    }
    if (!std::isfinite(row_max)) {
      fail(ErrorCode::kDegenerateRow,
           fmt::format("softmax row {} of {} has no unmasked entry", r, scores.shape_string()));
    }
    double total = 0.0;
    for (std::size_t c = 0; c < scores.cols(); ++c) {
      const double m = mask ? (*mask)(r, c) : 0.0;
      if (std::isinf(m)) {
        out(r, c) = 0.0;
        continue;
      }
      const double e = std::exp(scores(r, c) + m - row_max);
      out(r, c) = e;
      total += e;
    }
    for (std::size_t c = 0; c < scores.cols(); ++c) out(r, c) /= total;
  }
}

Var softmax_impl(Var scores, const Tensor* mask) {
  if (mask) require_same_shape(scores.value(), *mask, "masked_softmax");
  Tensor y;
  softmax_into(scores.value(), mask, y);
  Tensor y_copy = y;
  const Var inputs[] = {scores};
  return scores.tape().record(std::move(y), inputs,
                              [scores, y = std::move(y_copy)](Tape& t, const Tensor& g) {
                                Tensor& gs = t.grad_buffer(scores);
                                for (std::size_t r = 0; r < y.rows(); ++r) {
                                  double gy = 0.0;
                                  for (std::size_t c = 0; c < y.cols(); ++c) gy += g(r, c) * y(r, c);
                                  for (std::size_t c = 0; c < y.cols(); ++c)
                                    gs(r, c) += y(r, c) * (g(r, c) - gy);
                                }
                              });
}

}  // namespace

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->grad.reset();
}

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_index_.find(&p); it != param_index_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, {}, true, false, {}, &p});
  param_index_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (Var in : inputs) {
    if (&in.tape() != this) fail(ErrorCode::kDimension, "op input recorded on a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : BackwardFn{},
                        nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!nodes_[v.id()].requires_grad) return;
  Tensor& buf = grad_buffer(v);
  require_same_shape(buf, g, "gradient accumulate");
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) fail(ErrorCode::kRank, "backward: loss belongs to another tape");
  const Tensor& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    fail(ErrorCode::kRank, fmt::format("backward needs a scalar loss, got {}", lv.shape_string()));
  }
  if (consumed_) fail(ErrorCode::kStaleGradient, "backward called twice on one tape");
  for (const auto& [param, id] : param_index_) {
    if (param->grad) {
      fail(ErrorCode::kStaleGradient,
           fmt::format("parameter '{}' still holds a gradient; call zero_grads first", param->name));
    }
  }
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) {
    for (const auto& [param, id] : param_index_)
      param->grad = Tensor(param->value.rows(), param->value.cols());
    return;
  }
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    if (visit_observer_) visit_observer_(i);
    n.backward(*this, n.grad);
  }
  for (const auto& [param, id] : param_index_) {
    const Node& n = nodes_[id];
    param->grad = n.has_grad ? n.grad : Tensor(param->value.rows(), param->value.cols());
  }
}

// ---- primitives ---------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = matmul(av, bv);
  const Var inputs[] = {a, b};
  return a.tape().record(std::move(out), inputs, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t k = 0; k < av.cols(); ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < bv.cols(); ++j) s += g(i, j) * bv(k, j);
          ga(i, k) += s;
        }
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t k = 0; k < av.cols(); ++k) {
          const double aik = av(i, k);
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < bv.cols(); ++j) gb(k, j) += aik * g(i, j);
        }
    }
  });
}

Var transpose(Var a) {
  const Var inputs[] = {a};
  return a.tape().record(transpose(a.value()), inputs, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = !av.same_shape(bv) && bv.rows() == 1 && bv.cols() == av.cols();
  if (!broadcast) require_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += broadcast ? bv(0, c) : bv(r, c);
  const Var inputs[] = {a, b};
  return a.tape().record(std::move(out), inputs, [a, b, broadcast](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (!t.requires_grad(b)) return;
    if (!broadcast) {
      t.accumulate(b, g);
      return;
    }
    Tensor& gb = t.grad_buffer(b);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const Var inputs[] = {a, b};
  return a.tape().record(std::move(out), inputs, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  const Var inputs[] = {a};
  return a.tape().record(std::move(out), inputs, [a, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  const Var inputs[] = {a};
  return a.tape().record(std::move(out), inputs, [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var square(Var a) { return mul(a, a); }

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  Tensor y = out;
  const Var inputs[] = {a};
  return a.tape().record(std::move(out), inputs, [a, y = std::move(y)](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const Var inputs[] = {a};
  return a.tape().record(Tensor::scalar(s), inputs, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (double& v : ga.values()) v += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) fail(ErrorCode::kEmptySample, "mean of an empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var mean_rows(Var a) {
  const Tensor& av = a.value();
  if (av.rows() == 0) fail(ErrorCode::kEmptySample, "mean_rows of an empty tensor");
  const std::pair<std::size_t, std::size_t> all[] = {{0, av.rows()}};
  return segment_mean(a, all);
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& av = a.value();
  if (rows * cols != av.size()) {
    fail(ErrorCode::kDimension,
         fmt::format("reshape {} to {}", av.shape_string(), shape_string(rows, cols)));
  }
  Tensor out(rows, cols, std::vector<double>(av.values().begin(), av.values().end()));
  const Var inputs[] = {a};
  return a.tape().record(std::move(out), inputs, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (begin > end || end > av.rows()) {
    fail(ErrorCode::kDimension,
         fmt::format("slice_rows [{}, {}) out of range for {}", begin, end, av.shape_string()));
  }
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return gather_rows(a, idx);
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  Tensor out(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) {
      fail(ErrorCode::kDimension,
           fmt::format("gather_rows index {} out of range for {}", rows[i], av.shape_string()));
    }
    std::copy_n(av.row_span(rows[i]).begin(), av.cols(), out.row_span(i).begin());
  }
  const Var inputs[] = {a};
  return a.tape().record(std::move(out), inputs,
                         [a, idx = std::vector<std::size_t>(rows.begin(), rows.end())](
                             Tape& t, const Tensor& g) {
                           Tensor& ga = t.grad_buffer(a);
                           for (std::size_t i = 0; i < idx.size(); ++i)
                             for (std::size_t c = 0; c < g.cols(); ++c) ga(idx[i], c) += g(i, c);
                         });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::kEmptySample, "concat_rows of nothing");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    if (p.cols() != cols) {
      fail(ErrorCode::kDimension,
           fmt::format("concat_rows width mismatch: {} vs {}", cols, p.cols()));
    }
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t r = 0;
  for (Var p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.row_span(r).begin());
    r += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), inputs, [inputs](Tape& t, const Tensor& g) {
    std::size_t r = 0;
    for (Var p : inputs) {
      const std::size_t n = t.value(p).rows();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad_buffer(p);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g.values()[r * g.cols() + i];
      }
      r += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::kEmptySample, "concat_cols of nothing");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (p.rows() != rows) {
      fail(ErrorCode::kDimension,
           fmt::format("concat_cols height mismatch: {} vs {}", rows, p.rows()));
    }
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, offset + c) = pv(r, c);
    offset += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), inputs, [inputs](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (Var p : inputs) {
      const std::size_t w = t.value(p).cols();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad_buffer(p);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, offset + c);
      }
      offset += w;
    }
  });
}

Var segment_mean(Var a, std::span<const std::pair<std::size_t, std::size_t>> ranges) {
  const Tensor& av = a.value();
  Tensor out(ranges.size(), av.cols());
  for (std::size_t s = 0; s < ranges.size(); ++s) {
    const auto [begin, end] = ranges[s];
    if (begin >= end) fail(ErrorCode::kEmptyBlock, fmt::format("segment {} is empty", s));
    if (end > av.rows()) {
      fail(ErrorCode::kDimension,
           fmt::format("segment [{}, {}) out of range for {}", begin, end, av.shape_string()));
    }
    const double inv = 1.0 / static_cast<double>(end - begin);
    for (std::size_t r = begin; r < end; ++r)
      for (std::size_t c = 0; c < av.cols(); ++c) out(s, c) += av(r, c);
    for (std::size_t c = 0; c < av.cols(); ++c) out(s, c) *= inv;
  }
  const Var inputs[] = {a};
  return a.tape().record(
      std::move(out), inputs,
      [a, segs = std::vector<std::pair<std::size_t, std::size_t>>(ranges.begin(), ranges.end())](
          Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_buffer(a);
        for (std::size_t s = 0; s < segs.size(); ++s) {
          const auto [begin, end] = segs[s];
          const double inv = 1.0 / static_cast<double>(end - begin);
          for (std::size_t r = begin; r < end; ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += inv * g(s, c);
        }
      });
}

Var row_dot(Var a, Var b) {
  require_same_tape(a, b, "row_dot");
  require_same_shape(a.value(), b.value(), "row_dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) out(r, 0) = dot(av.row_span(r), bv.row_span(r));
  const Var inputs[] = {a, b};
  return a.tape().record(std::move(out), inputs, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) ga(r, c) += g(r, 0) * bv(r, c);
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) gb(r, c) += g(r, 0) * av(r, c);
    }
  });
}

Var normalize_rows(Var a) {
  const Tensor& av = a.value();
  Tensor out = av;
  std::vector<double> norms(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    norms[r] = l2_norm(av.row_span(r));
    if (norms[r] == 0.0) {
      fail(ErrorCode::kZeroNorm, fmt::format("row {} of {} has zero norm", r, av.shape_string()));
    }
    for (double& v : out.row_span(r)) v /= norms[r];
  }
  Tensor y = out;
  const Var inputs[] = {a};
  return a.tape().record(std::move(out), inputs,
                         [a, y = std::move(y), norms = std::move(norms)](Tape& t, const Tensor& g) {
                           Tensor& ga = t.grad_buffer(a);
                           for (std::size_t r = 0; r < y.rows(); ++r) {
                             const double yg = dot(y.row_span(r), g.row_span(r));
                             for (std::size_t c = 0; c < y.cols(); ++c)
                               ga(r, c) += (g(r, c) - y(r, c) * yg) / norms[r];
                           }
                         });
}

Var softmax_rows(Var scores) { return softmax_impl(scores, nullptr); }

Var masked_softmax(Var scores, const Tensor& mask) { return softmax_impl(scores, &mask); }

Tensor masked_softmax(const Tensor& scores, const Tensor& mask) {
  require_same_shape(scores, mask, "masked_softmax");
  Tensor out;
  softmax_into(scores, &mask, out);
  return out;
}

Var cross_entropy_rows(Var logits, std::span<const std::size_t> targets) {
  const Tensor& lv = logits.value();
  if (targets.size() != lv.rows()) {
    fail(ErrorCode::kDimension,
         fmt::format("cross_entropy_rows: {} targets for {}", targets.size(), lv.shape_string()));
  }
  Tensor probs;
  softmax_into(lv, nullptr, probs);
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (targets[r] >= lv.cols()) fail(ErrorCode::kDimension, "cross_entropy_rows target out of range");
    double row_max = lv(r, 0);
    for (std::size_t c = 1; c < lv.cols(); ++c) row_max = std::max(row_max, lv(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < lv.cols(); ++c) total += std::exp(lv(r, c) - row_max);
    loss += -(lv(r, targets[r]) - row_max - std::log(total));
  }
  const double n = static_cast<double>(lv.rows());
  const Var inputs[] = {logits};
  return logits.tape().record(
      Tensor::scalar(loss / n), inputs,
      [logits, probs = std::move(probs), tg = std::vector<std::size_t>(targets.begin(), targets.end()),
       n](Tape& t, const Tensor& g) {
        Tensor& gl = t.grad_buffer(logits);
        for (std::size_t r = 0; r < probs.rows(); ++r)
          for (std::size_t c = 0; c < probs.cols(); ++c) {
            const double onehot = c == tg[r] ? 1.0 : 0.0;
            gl(r, c) += g[0] * (probs(r, c) - onehot) / n;
          }
      });
}

AttentionResult attend(Var query, Var rows, Var key_proj, Var value_proj, const Tensor* mask) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.cols()));
  // q·(rows·Wk)ᵀ == (q·Wkᵀ)·rowsᵀ
  Var q_key = matmul(query, transpose(key_proj));
  Var scores = scale(matmul(q_key, transpose(rows)), inv_sqrt_d);
  query.tape().counters().score_pairs += rows.rows();
  Var weights = mask ? masked_softmax(scores, *mask) : softmax_rows(scores);
  Var output = matmul(matmul(weights, rows), value_proj);
  return {output, weights};
}

double evaluate_scalar(const std::function<Var(Tape&)>& build) {
  Tape tape;
  return build(tape).value().item();
}

}  // namespace mufasa
