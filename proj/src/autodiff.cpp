// SPDX-License-Identifier: Apache-2.0
#include "iag/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace iag {
namespace ad {

namespace {

thread_local int g_no_grad_depth = 0;

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw StageError(std::string("non-finite value produced by op ") + op);
  }
}

NodePtr make_node(Tensor value, const char* op, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward_fn) {
  check_finite(value, op);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  }
  if (needs) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

void shape_check(bool ok, const char* op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw StageError(std::string("shape mismatch in op ") + op + ": " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

}  // namespace

real_t Node::scalar() const {
  if (value.rows != 1 || value.cols != 1) {
    throw StageError("expected scalar node, got " + value.shape_str());
  }
  return value.data[0];
}

void Node::ensure_grad() {
  if (!grad.same_shape(value)) {
    grad = Tensor(value.rows, value.cols);
  }
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

NodePtr constant(Tensor value) {
  check_finite(value, "constant");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

NodePtr param(Tensor value) {
  check_finite(value, "param");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

NodePtr detach(const NodePtr& a) { return constant(a->value); }

NodePtr add(const NodePtr& a, const NodePtr& b) {
  shape_check(a->value.same_shape(b->value), "add", a->value, b->value);
  Tensor out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] += b->value.data[i];
  return make_node(std::move(out), "add", {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      for (size_t i = 0; i < self.grad.numel(); ++i) a->grad.data[i] += self.grad.data[i];
    }
    if (b->requires_grad) {
      for (size_t i = 0; i < self.grad.numel(); ++i) b->grad.data[i] += self.grad.data[i];
    }
  });
}

NodePtr add_rowvec(const NodePtr& a, const NodePtr& b) {
  shape_check(b->value.rows == 1 && b->value.cols == a->value.cols, "add_rowvec", a->value,
              b->value);
  Tensor out = a->value;
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) out.at(r, c) += b->value.at(0, c);
  }
  return make_node(std::move(out), "add_rowvec", {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      for (size_t i = 0; i < self.grad.numel(); ++i) a->grad.data[i] += self.grad.data[i];
    }
    if (b->requires_grad) {
      for (int r = 0; r < self.grad.rows; ++r) {
        for (int c = 0; c < self.grad.cols; ++c) b->grad.at(0, c) += self.grad.at(r, c);
      }
    }
  });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  shape_check(a->value.same_shape(b->value), "sub", a->value, b->value);
  Tensor out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] -= b->value.data[i];
  return make_node(std::move(out), "sub", {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      for (size_t i = 0; i < self.grad.numel(); ++i) a->grad.data[i] += self.grad.data[i];
    }
    if (b->requires_grad) {
      for (size_t i = 0; i < self.grad.numel(); ++i) b->grad.data[i] -= self.grad.data[i];
    }
  });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  shape_check(a->value.same_shape(b->value), "mul", a->value, b->value);
  Tensor out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= b->value.data[i];
  return make_node(std::move(out), "mul", {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      for (size_t i = 0; i < self.grad.numel(); ++i) {
        a->grad.data[i] += self.grad.data[i] * b->value.data[i];
      }
    }
    if (b->requires_grad) {
      for (size_t i = 0; i < self.grad.numel(); ++i) {
        b->grad.data[i] += self.grad.data[i] * a->value.data[i];
      }
    }
  });
}

NodePtr scale(const NodePtr& a, real_t c) {
  Tensor out = a->value;
  for (auto& x : out.data) x *= c;
  return make_node(std::move(out), "scale", {a}, [a, c](Node& self) {
    if (a->requires_grad) {
      for (size_t i = 0; i < self.grad.numel(); ++i) a->grad.data[i] += c * self.grad.data[i];
    }
  });
}

namespace {

// out += x * y, [n x k] * [k x m]
void mm_acc(const Tensor& x, const Tensor& y, Tensor& out) {
  for (int i = 0; i < x.rows; ++i) {
    const real_t* xi = &x.data[static_cast<size_t>(i) * static_cast<size_t>(x.cols)];
    real_t* oi = &out.data[static_cast<size_t>(i) * static_cast<size_t>(out.cols)];
    for (int k = 0; k < x.cols; ++k) {
      const real_t xv = xi[k];
      if (xv == 0) continue;
      const real_t* yk = &y.data[static_cast<size_t>(k) * static_cast<size_t>(y.cols)];
      for (int j = 0; j < y.cols; ++j) oi[j] += xv * yk[j];
    }
  }
}

// out += x * y^T, [n x k] * [m x k]^T
void mm_nt_acc(const Tensor& x, const Tensor& y, Tensor& out) {
  for (int i = 0; i < x.rows; ++i) {
    const real_t* xi = &x.data[static_cast<size_t>(i) * static_cast<size_t>(x.cols)];
    real_t* oi = &out.data[static_cast<size_t>(i) * static_cast<size_t>(out.cols)];
    for (int j = 0; j < y.rows; ++j) {
      const real_t* yj = &y.data[static_cast<size_t>(j) * static_cast<size_t>(y.cols)];
      real_t acc = 0;
      for (int k = 0; k < x.cols; ++k) acc += xi[k] * yj[k];
      oi[j] += acc;
    }
  }
}

// out += x^T * y, [n x k]^T * [n x m]
void mm_tn_acc(const Tensor& x, const Tensor& y, Tensor& out) {
  for (int i = 0; i < x.rows; ++i) {
    const real_t* xi = &x.data[static_cast<size_t>(i) * static_cast<size_t>(x.cols)];
    const real_t* yi = &y.data[static_cast<size_t>(i) * static_cast<size_t>(y.cols)];
    for (int k = 0; k < x.cols; ++k) {
      const real_t xv = xi[k];
      if (xv == 0) continue;
      real_t* ok = &out.data[static_cast<size_t>(k) * static_cast<size_t>(out.cols)];
      for (int j = 0; j < y.cols; ++j) ok[j] += xv * yi[j];
    }
  }
}

}  // namespace

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  shape_check(a->value.cols == b->value.rows, "matmul", a->value, b->value);
  Tensor out(a->value.rows, b->value.cols);
  mm_acc(a->value, b->value, out);
  return make_node(std::move(out), "matmul", {a, b}, [a, b](Node& self) {
    if (a->requires_grad) mm_nt_acc(self.grad, b->value, a->grad);
    if (b->requires_grad) mm_tn_acc(a->value, self.grad, b->grad);
  });
}

NodePtr matmul_nt(const NodePtr& a, const NodePtr& b) {
  shape_check(a->value.cols == b->value.cols, "matmul_nt", a->value, b->value);
  Tensor out(a->value.rows, b->value.rows);
  mm_nt_acc(a->value, b->value, out);
  return make_node(std::move(out), "matmul_nt", {a, b}, [a, b](Node& self) {
    if (a->requires_grad) mm_acc(self.grad, b->value, a->grad);
    if (b->requires_grad) mm_tn_acc(self.grad, a->value, b->grad);
  });
}

NodePtr attention_score(const NodePtr& q, const NodePtr& k) {
  shape_check(q->value.cols == k->value.cols, "attention_score", q->value, k->value);
  const real_t inv = static_cast<real_t>(1.0 / std::sqrt(static_cast<double>(q->value.cols)));
  Tensor out(q->value.rows, k->value.rows);
  mm_nt_acc(q->value, k->value, out);
  for (auto& x : out.data) x *= inv;
  return make_node(std::move(out), "attention_score", {q, k}, [q, k, inv](Node& self) {
    Tensor scaled = self.grad;
    for (auto& x : scaled.data) x *= inv;
    if (q->requires_grad) mm_acc(scaled, k->value, q->grad);
    if (k->requires_grad) mm_tn_acc(scaled, q->value, k->grad);
  });
}

namespace {

void softmax_row_stable(const real_t* in, real_t* out, int n) {
  real_t mx = in[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  real_t denom = 0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    denom += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= denom;
}

}  // namespace

NodePtr softmax_rows(const NodePtr& a) {
  Tensor out(a->value.rows, a->value.cols);
  for (int r = 0; r < out.rows; ++r) {
    softmax_row_stable(&a->value.at(r, 0), &out.at(r, 0), out.cols);
  }
  Tensor saved = out;
  return make_node(std::move(out), "softmax", {a}, [a, saved](Node& self) {
    if (!a->requires_grad) return;
    for (int r = 0; r < self.grad.rows; ++r) {
      real_t dot = 0;
      for (int c = 0; c < self.grad.cols; ++c) dot += self.grad.at(r, c) * saved.at(r, c);
      for (int c = 0; c < self.grad.cols; ++c) {
        a->grad.at(r, c) += saved.at(r, c) * (self.grad.at(r, c) - dot);
      }
    }
  });
}

NodePtr log_softmax_rows(const NodePtr& a) {
  Tensor out(a->value.rows, a->value.cols);
  for (int r = 0; r < out.rows; ++r) {
    const real_t* in = &a->value.at(r, 0);
    real_t mx = in[0];
    for (int c = 1; c < out.cols; ++c) mx = std::max(mx, in[c]);
    real_t denom = 0;
    for (int c = 0; c < out.cols; ++c) denom += std::exp(in[c] - mx);
    const real_t lse = mx + std::log(denom);
    for (int c = 0; c < out.cols; ++c) out.at(r, c) = in[c] - lse;
  }
  Tensor saved = out;
  return make_node(std::move(out), "log_softmax", {a}, [a, saved](Node& self) {
    if (!a->requires_grad) return;
    for (int r = 0; r < self.grad.rows; ++r) {
      real_t gsum = 0;
      for (int c = 0; c < self.grad.cols; ++c) gsum += self.grad.at(r, c);
      for (int c = 0; c < self.grad.cols; ++c) {
        a->grad.at(r, c) += self.grad.at(r, c) - std::exp(saved.at(r, c)) * gsum;
      }
    }
  });
}

NodePtr log(const NodePtr& a) {
  Tensor out(a->value.rows, a->value.cols);
  for (size_t i = 0; i < out.numel(); ++i) {
    if (!(a->value.data[i] > 0)) {
      throw StageError("log of non-positive value");
    }
    out.data[i] = std::log(a->value.data[i]);
  }
  return make_node(std::move(out), "log", {a}, [a](Node& self) {
    if (!a->requires_grad) return;
    for (size_t i = 0; i < self.grad.numel(); ++i) {
      a->grad.data[i] += self.grad.data[i] / a->value.data[i];
    }
  });
}

NodePtr exp(const NodePtr& a) {
  Tensor out(a->value.rows, a->value.cols);
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] = std::exp(a->value.data[i]);
  Tensor saved = out;
  return make_node(std::move(out), "exp", {a}, [a, saved](Node& self) {
    if (!a->requires_grad) return;
    for (size_t i = 0; i < self.grad.numel(); ++i) {
      a->grad.data[i] += self.grad.data[i] * saved.data[i];
    }
  });
}

NodePtr relu(const NodePtr& a) {
  Tensor out = a->value;
  for (auto& x : out.data) x = x > 0 ? x : 0;
  return make_node(std::move(out), "relu", {a}, [a](Node& self) {
    if (!a->requires_grad) return;
    for (size_t i = 0; i < self.grad.numel(); ++i) {
      if (a->value.data[i] > 0) a->grad.data[i] += self.grad.data[i];
    }
  });
}

NodePtr layer_norm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta, real_t eps) {
  shape_check(gamma->value.rows == 1 && gamma->value.cols == x->value.cols, "layer_norm",
              x->value, gamma->value);
  shape_check(beta->value.rows == 1 && beta->value.cols == x->value.cols, "layer_norm", x->value,
              beta->value);
  const int n = x->value.cols;
  Tensor xhat(x->value.rows, n);
  Tensor inv_std(x->value.rows, 1);
  Tensor out(x->value.rows, n);
  for (int r = 0; r < x->value.rows; ++r) {
    real_t mean = 0;
    for (int c = 0; c < n; ++c) mean += x->value.at(r, c);
    mean /= static_cast<real_t>(n);
    real_t var = 0;
    for (int c = 0; c < n; ++c) {
      real_t d = x->value.at(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<real_t>(n);
    const real_t istd = 1 / std::sqrt(var + eps);
    inv_std.at(r, 0) = istd;
    for (int c = 0; c < n; ++c) {
      xhat.at(r, c) = (x->value.at(r, c) - mean) * istd;
      out.at(r, c) = xhat.at(r, c) * gamma->value.at(0, c) + beta->value.at(0, c);
    }
  }
  return make_node(std::move(out), "layer_norm", {x, gamma, beta},
                   [x, gamma, beta, xhat, inv_std, n](Node& self) {
                     for (int r = 0; r < self.grad.rows; ++r) {
                       real_t mean_dxhat = 0, mean_dxhat_xhat = 0;
                       for (int c = 0; c < n; ++c) {
                         const real_t g = self.grad.at(r, c);
                         const real_t dxh = g * gamma->value.at(0, c);
                         mean_dxhat += dxh;
                         mean_dxhat_xhat += dxh * xhat.at(r, c);
                         if (gamma->requires_grad) gamma->grad.at(0, c) += g * xhat.at(r, c);
                         if (beta->requires_grad) beta->grad.at(0, c) += g;
                       }
                       mean_dxhat /= static_cast<real_t>(n);
                       mean_dxhat_xhat /= static_cast<real_t>(n);
                       if (x->requires_grad) {
                         for (int c = 0; c < n; ++c) {
                           const real_t dxh = self.grad.at(r, c) * gamma->value.at(0, c);
                           x->grad.at(r, c) += inv_std.at(r, 0) *
                                               (dxh - mean_dxhat - xhat.at(r, c) * mean_dxhat_xhat);
                         }
                       }
                     }
                   });
}

NodePtr gather_rows(const NodePtr& table, const std::vector<int>& ids) {
  Tensor out(static_cast<int>(ids.size()), table->value.cols);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table->value.rows) {
      throw StageError("gather_rows: id out of range: " + std::to_string(ids[i]));
    }
    for (int c = 0; c < table->value.cols; ++c) {
      out.at(static_cast<int>(i), c) = table->value.at(ids[i], c);
    }
  }
  return make_node(std::move(out), "gather", {table}, [table, ids](Node& self) {
    if (!table->requires_grad) return;
    for (size_t i = 0; i < ids.size(); ++i) {
      for (int c = 0; c < self.grad.cols; ++c) {
        table->grad.at(ids[i], c) += self.grad.at(static_cast<int>(i), c);
      }
    }
  });
}

NodePtr rows_pick(const NodePtr& a, const std::vector<int>& ids) {
  if (static_cast<int>(ids.size()) != a->value.rows) {
    throw StageError("rows_pick: need one index per row");
  }
  Tensor out(a->value.rows, 1);
  for (int r = 0; r < a->value.rows; ++r) {
    if (ids[static_cast<size_t>(r)] < 0 || ids[static_cast<size_t>(r)] >= a->value.cols) {
      throw StageError("rows_pick: column index out of range");
    }
    out.at(r, 0) = a->value.at(r, ids[static_cast<size_t>(r)]);
  }
  return make_node(std::move(out), "rows_pick", {a}, [a, ids](Node& self) {
    if (!a->requires_grad) return;
    for (int r = 0; r < self.grad.rows; ++r) {
      a->grad.at(r, ids[static_cast<size_t>(r)]) += self.grad.at(r, 0);
    }
  });
}

NodePtr pick(const NodePtr& a, int r, int c) {
  if (r < 0 || r >= a->value.rows || c < 0 || c >= a->value.cols) {
    throw StageError("pick: index out of range");
  }
  return make_node(Tensor::scalar(a->value.at(r, c)), "pick", {a}, [a, r, c](Node& self) {
    if (a->requires_grad) a->grad.at(r, c) += self.grad.data[0];
  });
}

NodePtr slice_rows(const NodePtr& a, int r0, int r1) {
  if (r0 < 0 || r1 > a->value.rows || r0 >= r1) throw StageError("slice_rows: bad range");
  Tensor out(r1 - r0, a->value.cols);
  for (int r = r0; r < r1; ++r) {
    for (int c = 0; c < out.cols; ++c) out.at(r - r0, c) = a->value.at(r, c);
  }
  return make_node(std::move(out), "slice_rows", {a}, [a, r0](Node& self) {
    if (!a->requires_grad) return;
    for (int r = 0; r < self.grad.rows; ++r) {
      for (int c = 0; c < self.grad.cols; ++c) a->grad.at(r + r0, c) += self.grad.at(r, c);
    }
  });
}

NodePtr concat_rows(const std::vector<NodePtr>& parts) {
  if (parts.empty()) throw StageError("concat_rows: empty input");
  int cols = parts[0]->value.cols;
  int rows = 0;
  for (const auto& p : parts) {
    shape_check(p->value.cols == cols, "concat_rows", parts[0]->value, p->value);
    rows += p->value.rows;
  }
  Tensor out(rows, cols);
  int r = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < p->value.rows; ++i, ++r) {
      for (int c = 0; c < cols; ++c) out.at(r, c) = p->value.at(i, c);
    }
  }
  return make_node(std::move(out), "concat_rows", parts, [parts](Node& self) {
    int r = 0;
    for (const auto& p : parts) {
      if (p->requires_grad) {
        for (int i = 0; i < p->value.rows; ++i) {
          for (int c = 0; c < self.grad.cols; ++c) p->grad.at(i, c) += self.grad.at(r + i, c);
        }
      }
      r += p->value.rows;
    }
  });
}

NodePtr concat_cols(const std::vector<NodePtr>& parts) {
  if (parts.empty()) throw StageError("concat_cols: empty input");
  int rows = parts[0]->value.rows;
  int cols = 0;
  for (const auto& p : parts) {
    shape_check(p->value.rows == rows, "concat_cols", parts[0]->value, p->value);
    cols += p->value.cols;
  }
  Tensor out(rows, cols);
  int c0 = 0;
  for (const auto& p : parts) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < p->value.cols; ++c) out.at(r, c0 + c) = p->value.at(r, c);
    }
    c0 += p->value.cols;
  }
  return make_node(std::move(out), "concat_cols", parts, [parts](Node& self) {
    int c0 = 0;
    for (const auto& p : parts) {
      if (p->requires_grad) {
        for (int r = 0; r < self.grad.rows; ++r) {
          for (int c = 0; c < p->value.cols; ++c) p->grad.at(r, c) += self.grad.at(r, c0 + c);
        }
      }
      c0 += p->value.cols;
    }
  });
}

NodePtr sum(const NodePtr& a) {
  real_t total = 0;
  for (real_t x : a->value.data) total += x;
  return make_node(Tensor::scalar(total), "sum", {a}, [a](Node& self) {
    if (!a->requires_grad) return;
    for (size_t i = 0; i < a->grad.numel(); ++i) a->grad.data[i] += self.grad.data[0];
  });
}

void backward(const NodePtr& root) {
  if (!root) throw StageError("backward: null root");
  if (root->value.rows != 1 || root->value.cols != 1) {
    throw StageError("backward: root must be scalar, got " + root->value.shape_str());
  }
  // iterative post-order topological sort
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next].get();
      ++next;
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  // Fresh gradients for interior nodes; leaves keep accumulating.
  for (Node* n : topo) {
    n->ensure_grad();
    if (!n->is_leaf) n->grad.fill(0);
  }
  if (!root->is_leaf) {
    root->grad.data[0] = 1;
  } else {
    root->grad.data[0] += 1;
  }
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace ad
}  // namespace iag
