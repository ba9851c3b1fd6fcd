#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drc/errors.hpp"
#include "drc/tensor.hpp"

namespace drc {

enum class Pooling { Max, Sum, Mean, Last };

inline const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::Max: return "max";
    case Pooling::Sum: return "sum";
    case Pooling::Mean: return "mean";
    case Pooling::Last: return "last";
  }
  return "?";
}

inline Pooling pooling_from_name(const std::string& name) {
  if (name == "max") return Pooling::Max;
  if (name == "sum") return Pooling::Sum;
  if (name == "mean") return Pooling::Mean;
  if (name == "last") return Pooling::Last;
  throw ConfigError("unknown pooling function: '" + name + "'");
}

// Handle to a value recorded on a Tape. Cheap to copy; only valid for the
// tape that produced it.
struct Var {
  std::uint64_t tape = 0;
  std::uint32_t index = 0;
  bool valid() const { return tape != 0; }
};

// Reverse-mode differentiation tape. Records primitive operations (affine,
// elementwise, pooling, softmax, cross-entropy) as they execute; backward()
// replays them in exact reverse order, accumulating into zero-initialized
// gradient buffers.
//
// A tape and its tensors belong to one thread; independent tapes may run in
// parallel. Leaves created with the *_ref forms borrow external storage and
// never mutate it: gradients always live in tape-local buffers.
class Tape {
 public:
  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves ---------------------------------------------------------

  // Constant leaf: no gradient flows into it (word vectors, zero states).
  Var constant(Tensor value) { return push_leaf(std::move(value), nullptr, false); }
  Var constant_ref(const Tensor* value) { return push_leaf(Tensor(), value, false); }

  // Trainable leaf: gradient is accumulated during backward().
  Var parameter(Tensor value) { return push_leaf(std::move(value), nullptr, true); }
  Var parameter_ref(const Tensor* value) { return push_leaf(Tensor(), value, true); }

  // --- primitives ------------------------------------------------------

  // W (d x k) * x (k) + b (d).
  Var affine(Var w, Var x, Var b) {
    const Tensor& W = value(w);
    const Tensor& X = value(x);
    const Tensor& B = value(b);
    if (W.rank() != 2 || X.rank() != 1 || B.rank() != 1 || W.cols() != X.size() ||
        W.rows() != B.size()) {
      throw DimensionError("affine: incompatible shapes W" + W.shape_str() + " x" +
                           X.shape_str() + " b" + B.shape_str());
    }
    Tensor out({W.rows()});
    for (std::size_t i = 0; i < W.rows(); ++i) {
      double s = B[i];
      for (std::size_t j = 0; j < W.cols(); ++j) s += W.at(i, j) * X[j];
      out[i] = s;
    }
    return push_op(std::move(out), {w, x, b},
                   [wi = w.index, xi = x.index, bi = b.index](Tape& t, const Node& self) {
                     const Tensor& gy = self.grad;
                     const Tensor& W = t.val(wi);
                     const Tensor& X = t.val(xi);
                     if (t.nodes_[wi].needs_grad) {
                       Tensor& gw = t.nodes_[wi].grad;
                       for (std::size_t i = 0; i < W.rows(); ++i)
                         for (std::size_t j = 0; j < W.cols(); ++j)
                           gw.at(i, j) += gy[i] * X[j];
                     }
                     if (t.nodes_[xi].needs_grad) {
                       Tensor& gx = t.nodes_[xi].grad;
                       for (std::size_t j = 0; j < W.cols(); ++j) {
                         double s = 0.0;
                         for (std::size_t i = 0; i < W.rows(); ++i) s += W.at(i, j) * gy[i];
                         gx[j] += s;
                       }
                     }
                     if (t.nodes_[bi].needs_grad) {
                       Tensor& gb = t.nodes_[bi].grad;
                       for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
                     }
                   });
  }

  // W (d x k) * x (k), no bias term.
  Var matvec(Var w, Var x) {
    const Tensor& W = value(w);
    const Tensor& X = value(x);
    if (W.rank() != 2 || X.rank() != 1 || W.cols() != X.size()) {
      throw DimensionError("matvec: incompatible shapes W" + W.shape_str() + " x" +
                           X.shape_str());
    }
    Tensor out({W.rows()});
    for (std::size_t i = 0; i < W.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < W.cols(); ++j) s += W.at(i, j) * X[j];
      out[i] = s;
    }
    return push_op(std::move(out), {w, x},
                   [wi = w.index, xi = x.index](Tape& t, const Node& self) {
                     const Tensor& gy = self.grad;
                     const Tensor& W = t.val(wi);
                     const Tensor& X = t.val(xi);
                     if (t.nodes_[wi].needs_grad) {
                       Tensor& gw = t.nodes_[wi].grad;
                       for (std::size_t i = 0; i < W.rows(); ++i)
                         for (std::size_t j = 0; j < W.cols(); ++j)
                           gw.at(i, j) += gy[i] * X[j];
                     }
                     if (t.nodes_[xi].needs_grad) {
                       Tensor& gx = t.nodes_[xi].grad;
                       for (std::size_t j = 0; j < W.cols(); ++j) {
                         double s = 0.0;
                         for (std::size_t i = 0; i < W.rows(); ++i) s += W.at(i, j) * gy[i];
                         gx[j] += s;
                       }
                     }
                   });
  }

  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) {
      throw DimensionError("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    }
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return push_op(std::move(out), {a, b},
                   [ai = a.index, bi = b.index](Tape& t, const Node& self) {
                     const Tensor& gy = self.grad;
                     if (t.nodes_[ai].needs_grad) {
                       Tensor& ga = t.nodes_[ai].grad;
                       for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                     }
                     if (t.nodes_[bi].needs_grad) {
                       Tensor& gb = t.nodes_[bi].grad;
                       for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
                     }
                   });
  }

  // Elementwise product.
  Var mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) {
      throw DimensionError("mul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    }
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return push_op(std::move(out), {a, b},
                   [ai = a.index, bi = b.index](Tape& t, const Node& self) {
                     const Tensor& gy = self.grad;
                     const Tensor& A = t.val(ai);
                     const Tensor& B = t.val(bi);
                     if (t.nodes_[ai].needs_grad) {
                       Tensor& ga = t.nodes_[ai].grad;
                       for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * B[i];
                     }
                     if (t.nodes_[bi].needs_grad) {
                       Tensor& gb = t.nodes_[bi].grad;
                       for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * A[i];
                     }
                   });
  }

  Var tanh(Var x) {
    Tensor out = value(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return push_op(std::move(out), {x}, [xi = x.index](Tape& t, const Node& self) {
      if (!t.nodes_[xi].needs_grad) return;
      const Tensor& gy = self.grad;
      const Tensor& y = self.value;
      Tensor& gx = t.nodes_[xi].grad;
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (1.0 - y[i] * y[i]);
    });
  }

  // sigmoid(x) = 1 / (1 + exp(-x)).
  Var sigmoid(Var x) {
    Tensor out = value(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return push_op(std::move(out), {x}, [xi = x.index](Tape& t, const Node& self) {
      if (!t.nodes_[xi].needs_grad) return;
      const Tensor& gy = self.grad;
      const Tensor& y = self.value;
      Tensor& gx = t.nodes_[xi].grad;
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
    });
  }

  // Elementwise max / sum / mean over equally shaped vectors. Max routes
  // each coordinate's gradient to the first input attaining the maximum.
  Var pool(Pooling fn, std::span<const Var> xs) {
    if (xs.empty()) throw DimensionError("pool: empty input list");
    if (fn == Pooling::Last) {
      throw ConfigError("pool: 'last' is not an elementwise pooling function");
    }
    const Tensor& first = value(xs[0]);
    for (const Var& v : xs) {
      if (!value(v).same_shape(first)) {
        throw DimensionError("pool: shape mismatch " + value(v).shape_str() + " vs " +
                             first.shape_str());
      }
    }
    const std::size_t m = first.size();
    const std::size_t n = xs.size();
    std::vector<std::uint32_t> inputs(n);
    for (std::size_t j = 0; j < n; ++j) inputs[j] = xs[j].index;

    Tensor out = Tensor::zeros_like(first);
    std::vector<std::uint32_t> argmax;
    if (fn == Pooling::Max) {
      argmax.assign(m, 0);
      for (std::size_t i = 0; i < m; ++i) {
        double best = value(xs[0])[i];
        for (std::size_t j = 1; j < n; ++j) {
          double v = value(xs[j])[i];
          if (v > best) {
            best = v;
            argmax[i] = static_cast<std::uint32_t>(j);
          }
        }
        out[i] = best;
      }
    } else {
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += value(xs[j])[i];
        out[i] = (fn == Pooling::Mean) ? s / static_cast<double>(n) : s;
      }
    }

    std::vector<Var> parents(xs.begin(), xs.end());
    return push_op_multi(
        std::move(out), parents,
        [fn, inputs = std::move(inputs), argmax = std::move(argmax), n](Tape& t,
                                                                        const Node& self) {
          const Tensor& gy = self.grad;
          if (fn == Pooling::Max) {
            for (std::size_t i = 0; i < gy.size(); ++i) {
              std::uint32_t j = argmax[i];
              if (t.nodes_[inputs[j]].needs_grad) t.nodes_[inputs[j]].grad[i] += gy[i];
            }
          } else {
            double scale = (fn == Pooling::Mean) ? 1.0 / static_cast<double>(n) : 1.0;
            for (std::uint32_t idx : inputs) {
              if (!t.nodes_[idx].needs_grad) continue;
              Tensor& g = t.nodes_[idx].grad;
              for (std::size_t i = 0; i < gy.size(); ++i) g[i] += scale * gy[i];
            }
          }
        });
  }

  // Max-subtracted softmax over a vector.
  Var softmax(Var logits) {
    const Tensor& z = value(logits);
    if (z.rank() != 1 || z.size() == 0) {
      throw DimensionError("softmax: expected a non-empty vector, got " + z.shape_str());
    }
    double m = z[0];
    for (std::size_t i = 1; i < z.size(); ++i) m = std::max(m, z[i]);
    Tensor out({z.size()});
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      out[i] = std::exp(z[i] - m);
      sum += out[i];
    }
    for (std::size_t i = 0; i < z.size(); ++i) out[i] /= sum;
    return push_op(std::move(out), {logits}, [zi = logits.index](Tape& t, const Node& self) {
      if (!t.nodes_[zi].needs_grad) return;
      const Tensor& gy = self.grad;
      const Tensor& p = self.value;
      double dot = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) dot += gy[i] * p[i];
      Tensor& gz = t.nodes_[zi].grad;
      for (std::size_t i = 0; i < p.size(); ++i) gz[i] += p[i] * (gy[i] - dot);
    });
  }

  // Fused softmax + cross-entropy: the scalar -log softmax(z)[gold] computed
  // through log-sum-exp, never through the log of a small probability.
  Var cross_entropy_with_logits(Var logits, std::size_t gold) {
    const Tensor& z = value(logits);
    if (z.rank() != 1 || z.size() == 0) {
      throw DimensionError("cross_entropy_with_logits: expected a non-empty vector, got " +
                           z.shape_str());
    }
    if (gold >= z.size()) {
      throw DimensionError("cross_entropy_with_logits: gold index " + std::to_string(gold) +
                           " out of range for " + std::to_string(z.size()) + " labels");
    }
    double m = z[0];
    for (std::size_t i = 1; i < z.size(); ++i) m = std::max(m, z[i]);
    double sum = 0.0;
    std::vector<double> p(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      p[i] = std::exp(z[i] - m);
      sum += p[i];
    }
    for (std::size_t i = 0; i < z.size(); ++i) p[i] /= sum;
    double loss = m + std::log(sum) - z[gold];
    return push_op(Tensor::scalar(loss), {logits},
                   [zi = logits.index, gold, p = std::move(p)](Tape& t, const Node& self) {
                     if (!t.nodes_[zi].needs_grad) return;
                     double g0 = self.grad[0];
                     Tensor& gz = t.nodes_[zi].grad;
                     for (std::size_t i = 0; i < p.size(); ++i) {
                       double onehot = (i == gold) ? 1.0 : 0.0;
                       gz[i] += g0 * (p[i] - onehot);
                     }
                   });
  }

  // Scalar sum of all entries.
  Var sum(Var x) {
    const Tensor& X = value(x);
    double s = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) s += X[i];
    return push_op(Tensor::scalar(s), {x}, [xi = x.index](Tape& t, const Node& self) {
      if (!t.nodes_[xi].needs_grad) return;
      double g0 = self.grad[0];
      Tensor& gx = t.nodes_[xi].grad;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g0;
    });
  }

  // --- reverse pass ----------------------------------------------------

  // Zeroes every gradient buffer, seeds d(loss)/d(loss) = 1, then replays
  // the recorded operations in reverse creation order. Running it twice
  // gives identical gradients.
  void backward(Var loss) {
    check(loss);
    if (value(loss).size() != 1) {
      throw std::logic_error("backward: loss must be a scalar, got shape " +
                             value(loss).shape_str());
    }
    for (Node& n : nodes_) {
      n.grad = Tensor(n.external ? n.external->shape() : n.value.shape());
    }
    nodes_[loss.index].grad[0] = 1.0;
    for (std::uint32_t i = loss.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backprop) n.backprop(*this, n);
    }
    grads_ready_ = true;
  }

  const Tensor& value(Var v) const {
    check(v);
    return val(v.index);
  }

  const Tensor& grad(Var v) const {
    check(v);
    if (!grads_ready_) {
      throw std::logic_error("grad: backward() has not been run on this tape");
    }
    return nodes_[v.index].grad;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node;
  using Backprop = std::function<void(Tape&, const Node&)>;

  struct Node {
    Tensor value;                      // owned result, unused when external is set
    const Tensor* external = nullptr;  // borrowed leaf storage
    Tensor grad;
    bool needs_grad = false;
    Backprop backprop;                 // set only on ops whose parents need grads
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  void check(Var v) const {
    if (v.tape != id_ || v.index >= nodes_.size()) {
      throw std::logic_error("variable does not belong to this tape");
    }
  }

  const Tensor& val(std::uint32_t i) const {
    const Node& n = nodes_[i];
    return n.external ? *n.external : n.value;
  }

  Var push_leaf(Tensor value, const Tensor* external, bool needs_grad) {
    const Tensor& v = external ? *external : value;
    if (v.size() == 0) throw DimensionError("leaf: empty tensor");
    if (!v.finite()) throw NumericError("leaf: non-finite values");
    Node n;
    n.value = std::move(value);
    n.external = external;
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    grads_ready_ = false;
    return Var{id_, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Var push_op(Tensor out, std::initializer_list<Var> parents, Backprop fn) {
    std::vector<Var> p(parents);
    return push_op_multi(std::move(out), p, std::move(fn));
  }

  Var push_op_multi(Tensor out, const std::vector<Var>& parents, Backprop fn) {
    bool needs = false;
    for (const Var& v : parents) {
      check(v);
      if (nodes_[v.index].needs_grad) needs = true;
    }
    Node n;
    n.value = std::move(out);
    n.needs_grad = needs;
    if (needs) n.backprop = std::move(fn);
    nodes_.push_back(std::move(n));
    grads_ready_ = false;
    return Var{id_, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::uint64_t id_;
  std::deque<Node> nodes_;  // deque: references from value()/grad() stay valid as ops record
  bool grads_ready_ = false;
};

}  // namespace drc
