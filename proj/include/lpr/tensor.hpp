#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace lpr {

// Reverse-mode autodiff over row-major n-d arrays, templated on the scalar so
// the same graph code runs in float (primary) and double (gradient-check
// shadow mode). Matrix products go through Eigen; reductions accumulate in
// double; the conv inner loop uses explicit fma so vector and tail lanes
// round identically (the RIE's bit-exact shift equivariance depends on it).

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor: nonpositive dim in " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

template <typename S>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // empty for leaves
  };
  using NodePtr = std::shared_ptr<Node>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor leaf(Shape shape, std::vector<S> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
      throw std::invalid_argument("tensor: " + shape_str(shape) + " needs " +
                                  std::to_string(shape_numel(shape)) + " values, got " +
                                  std::to_string(data.size()));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor constant(Shape shape, std::vector<S> data) {
    return leaf(std::move(shape), std::move(data), false);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return leaf(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[i]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->data.size(); }
  const std::vector<S>& data() const { return node_->data; }
  std::vector<S>& mutable_data() { return node_->data; }
  const std::vector<S>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  const NodePtr& node() const { return node_; }

  S item() const {
    if (numel() != 1) {
      throw std::invalid_argument("item: tensor " + shape_str(shape()) + " is not scalar");
    }
    return node_->data[0];
  }

 private:
  NodePtr node_;
};

namespace detail {

template <typename S>
typename Tensor<S>::NodePtr make_op_node(
    Shape shape, std::vector<typename Tensor<S>::NodePtr> parents) {
  auto node = std::make_shared<typename Tensor<S>::Node>();
  node->data.resize(shape_numel(shape));
  node->shape = std::move(shape);
  for (const auto& p : parents) node->requires_grad |= p->requires_grad;
  node->parents = std::move(parents);
  return node;
}

template <typename S>
void require_rank(const Tensor<S>& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " +
                                std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename S>
using EigenMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstEigenMap = Eigen::Map<
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
ConstEigenMap<S> as_matrix(const typename Tensor<S>::Node& n, int rows, int cols) {
  return ConstEigenMap<S>(n.data.data(), rows, cols);
}

template <typename S>
ConstEigenMap<S> grad_matrix(const typename Tensor<S>::Node& n, int rows, int cols) {
  return ConstEigenMap<S>(n.grad.data(), rows, cols);
}

}  // namespace detail

// --- elementwise ---

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  auto node = detail::make_op_node<S>(a.shape(), {a.node(), b.node()});
  const std::size_t n = node->data.size();
  for (std::size_t i = 0; i < n; ++i) node->data[i] = a.data()[i] + b.data()[i];
  node->backprop = [](typename Tensor<S>::Node& self) {
    for (int p = 0; p < 2; ++p) {
      auto& parent = *self.parents[p];
      if (!parent.requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) parent.grad[i] += self.grad[i];
    }
  };
  return Tensor<S>(node);
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  auto node = detail::make_op_node<S>(a.shape(), {a.node(), b.node()});
  const std::size_t n = node->data.size();
  for (std::size_t i = 0; i < n; ++i) node->data[i] = a.data()[i] - b.data()[i];
  node->backprop = [](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  };
  return Tensor<S>(node);
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  auto node = detail::make_op_node<S>(a.shape(), {a.node(), b.node()});
  const std::size_t n = node->data.size();
  for (std::size_t i = 0; i < n; ++i) node->data[i] = a.data()[i] * b.data()[i];
  node->backprop = [](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        pa.grad[i] += self.grad[i] * pb.data[i];
      }
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        pb.grad[i] += self.grad[i] * pa.data[i];
      }
    }
  };
  return Tensor<S>(node);
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  auto node = detail::make_op_node<S>(a.shape(), {a.node()});
  for (std::size_t i = 0; i < node->data.size(); ++i) node->data[i] = a.data()[i] + c;
  node->backprop = [](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  };
  return Tensor<S>(node);
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  auto node = detail::make_op_node<S>(a.shape(), {a.node()});
  for (std::size_t i = 0; i < node->data.size(); ++i) node->data[i] = a.data()[i] * c;
  node->backprop = [c](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * c;
  };
  return Tensor<S>(node);
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  auto node = detail::make_op_node<S>(a.shape(), {a.node()});
  for (std::size_t i = 0; i < node->data.size(); ++i) {
    node->data[i] = a.data()[i] > S(0) ? a.data()[i] : S(0);
  }
  node->backprop = [](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.data[i] > S(0)) pa.grad[i] += self.grad[i];
    }
  };
  return Tensor<S>(node);
}

// --- broadcast helpers (the only broadcasting the model needs) ---

namespace detail {
template <typename S>
void require_rowvec(const Tensor<S>& m, const Tensor<S>& v, const char* op) {
  require_rank(m, 2, op);
  if (v.rank() != 1 || v.dim(0) != m.dim(1)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(m.shape()) + " vs " + shape_str(v.shape()));
  }
}
}  // namespace detail

/// m[r,c] + v[c], broadcast over rows.
template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& m, const Tensor<S>& v) {
  detail::require_rowvec(m, v, "add_rowvec");
  auto node = detail::make_op_node<S>(m.shape(), {m.node(), v.node()});
  const int rows = m.dim(0), cols = m.dim(1);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      node->data[r * cols + c] = m.data()[r * cols + c] + v.data()[c];
    }
  }
  node->backprop = [rows, cols](typename Tensor<S>::Node& self) {
    auto& pm = *self.parents[0];
    auto& pv = *self.parents[1];
    if (pm.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) pm.grad[i] += self.grad[i];
    }
    if (pv.requires_grad) {
      for (int c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (int r = 0; r < rows; ++r) acc += static_cast<double>(self.grad[r * cols + c]);
        pv.grad[c] += static_cast<S>(acc);
      }
    }
  };
  return Tensor<S>(node);
}

/// m[r,c] * v[c] elementwise per row (layer-norm gain and the like).
template <typename S>
Tensor<S> mul_rowvec(const Tensor<S>& m, const Tensor<S>& v) {
  detail::require_rowvec(m, v, "mul_rowvec");
  auto node = detail::make_op_node<S>(m.shape(), {m.node(), v.node()});
  const int rows = m.dim(0), cols = m.dim(1);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      node->data[r * cols + c] = m.data()[r * cols + c] * v.data()[c];
    }
  }
  node->backprop = [rows, cols](typename Tensor<S>::Node& self) {
    auto& pm = *self.parents[0];
    auto& pv = *self.parents[1];
    if (pm.requires_grad) {
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          pm.grad[r * cols + c] += self.grad[r * cols + c] * pv.data[c];
        }
      }
    }
    if (pv.requires_grad) {
      for (int c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (int r = 0; r < rows; ++r) {
          acc += static_cast<double>(self.grad[r * cols + c]) * pm.data[r * cols + c];
        }
        pv.grad[c] += static_cast<S>(acc);
      }
    }
  };
  return Tensor<S>(node);
}

/// m[r,c] * v[r]: row k scaled by v[k] (cluster-mass scaling in NetVLAD).
template <typename S>
Tensor<S> mul_colvec(const Tensor<S>& m, const Tensor<S>& v) {
  detail::require_rank(m, 2, "mul_colvec");
  if (v.rank() != 1 || v.dim(0) != m.dim(0)) {
    throw std::invalid_argument("mul_colvec: shape mismatch " + shape_str(m.shape()) +
                                " vs " + shape_str(v.shape()));
  }
  auto node = detail::make_op_node<S>(m.shape(), {m.node(), v.node()});
  const int rows = m.dim(0), cols = m.dim(1);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      node->data[r * cols + c] = m.data()[r * cols + c] * v.data()[r];
    }
  }
  node->backprop = [rows, cols](typename Tensor<S>::Node& self) {
    auto& pm = *self.parents[0];
    auto& pv = *self.parents[1];
    if (pm.requires_grad) {
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          pm.grad[r * cols + c] += self.grad[r * cols + c] * pv.data[r];
        }
      }
    }
    if (pv.requires_grad) {
      for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int c = 0; c < cols; ++c) {
          acc += static_cast<double>(self.grad[r * cols + c]) * pm.data[r * cols + c];
        }
        pv.grad[r] += static_cast<S>(acc);
      }
    }
  };
  return Tensor<S>(node);
}

// --- matrix products (Eigen gemm) ---

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto node = detail::make_op_node<S>({m, n}, {a.node(), b.node()});
  detail::EigenMap<S>(node->data.data(), m, n).noalias() =
      detail::as_matrix<S>(*a.node(), m, k) * detail::as_matrix<S>(*b.node(), k, n);
  node->backprop = [m, k, n](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto dC = detail::grad_matrix<S>(self, m, n);
    if (pa.requires_grad) {
      detail::EigenMap<S>(pa.grad.data(), m, k).noalias() +=
          dC * detail::as_matrix<S>(pb, k, n).transpose();
    }
    if (pb.requires_grad) {
      detail::EigenMap<S>(pb.grad.data(), k, n).noalias() +=
          detail::as_matrix<S>(pa, m, k).transpose() * dC;
    }
  };
  return Tensor<S>(node);
}

/// a[m,k] * b[n,k]^T -> [m,n] (attention scores).
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("matmul_nt: " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()) + "^T");
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto node = detail::make_op_node<S>({m, n}, {a.node(), b.node()});
  detail::EigenMap<S>(node->data.data(), m, n).noalias() =
      detail::as_matrix<S>(*a.node(), m, k) *
      detail::as_matrix<S>(*b.node(), n, k).transpose();
  node->backprop = [m, k, n](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto dC = detail::grad_matrix<S>(self, m, n);
    if (pa.requires_grad) {
      detail::EigenMap<S>(pa.grad.data(), m, k).noalias() +=
          dC * detail::as_matrix<S>(pb, n, k);
    }
    if (pb.requires_grad) {
      detail::EigenMap<S>(pb.grad.data(), n, k).noalias() +=
          dC.transpose() * detail::as_matrix<S>(pa, m, k);
    }
  };
  return Tensor<S>(node);
}

/// a[k,m]^T * b[k,n] -> [m,n] (VLAD aggregation).
template <typename S>
Tensor<S> matmul_tn(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_rank(a, 2, "matmul_tn");
  detail::require_rank(b, 2, "matmul_tn");
  if (a.dim(0) != b.dim(0)) {
    throw std::invalid_argument("matmul_tn: " + shape_str(a.shape()) + "^T x " +
                                shape_str(b.shape()));
  }
  const int k = a.dim(0), m = a.dim(1), n = b.dim(1);
  auto node = detail::make_op_node<S>({m, n}, {a.node(), b.node()});
  detail::EigenMap<S>(node->data.data(), m, n).noalias() =
      detail::as_matrix<S>(*a.node(), k, m).transpose() *
      detail::as_matrix<S>(*b.node(), k, n);
  node->backprop = [m, k, n](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto dC = detail::grad_matrix<S>(self, m, n);
    if (pa.requires_grad) {
      detail::EigenMap<S>(pa.grad.data(), k, m).noalias() +=
          detail::as_matrix<S>(pb, k, n) * dC.transpose();
    }
    if (pb.requires_grad) {
      detail::EigenMap<S>(pb.grad.data(), k, n).noalias() +=
          detail::as_matrix<S>(pa, k, m) * dC;
    }
  };
  return Tensor<S>(node);
}

// --- structural ops ---

template <typename S>
Tensor<S> transpose2d(const Tensor<S>& a) {
  detail::require_rank(a, 2, "transpose2d");
  const int rows = a.dim(0), cols = a.dim(1);
  auto node = detail::make_op_node<S>({cols, rows}, {a.node()});
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) node->data[c * rows + r] = a.data()[r * cols + c];
  }
  node->backprop = [rows, cols](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) pa.grad[r * cols + c] += self.grad[c * rows + r];
    }
  };
  return Tensor<S>(node);
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " to " +
                                shape_str(shape));
  }
  auto node = detail::make_op_node<S>(std::move(shape), {a.node()});
  node->data = a.data();
  node->backprop = [](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  };
  return Tensor<S>(node);
}

/// Concatenation along axis 0 or 1 for matrices, or of 1-d vectors.
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int rank = parts[0].rank();
  if (rank == 1) {
    if (axis != 0) throw std::invalid_argument("concat: axis out of range for vectors");
    int total = 0;
    std::vector<typename Tensor<S>::NodePtr> nodes;
    for (const auto& p : parts) {
      detail::require_rank(p, 1, "concat");
      total += p.dim(0);
      nodes.push_back(p.node());
    }
    auto node = detail::make_op_node<S>({total}, std::move(nodes));
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.data().begin(), p.data().end(), node->data.begin() + off);
      off += p.numel();
    }
    node->backprop = [](typename Tensor<S>::Node& self) {
      std::size_t off = 0;
      for (auto& parent : self.parents) {
        if (parent->requires_grad) {
          for (std::size_t i = 0; i < parent->grad.size(); ++i) {
            parent->grad[i] += self.grad[off + i];
          }
        }
        off += parent->data.size();
      }
    };
    return Tensor<S>(node);
  }
  if (rank != 2 || (axis != 0 && axis != 1)) {
    throw std::invalid_argument("concat: unsupported rank/axis");
  }
  if (axis == 0) {
    const int cols = parts[0].dim(1);
    int rows = 0;
    std::vector<typename Tensor<S>::NodePtr> nodes;
    for (const auto& p : parts) {
      detail::require_rank(p, 2, "concat");
      if (p.dim(1) != cols) {
        throw std::invalid_argument("concat: column mismatch " + shape_str(p.shape()));
      }
      rows += p.dim(0);
      nodes.push_back(p.node());
    }
    auto node = detail::make_op_node<S>({rows, cols}, std::move(nodes));
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.data().begin(), p.data().end(), node->data.begin() + off);
      off += p.numel();
    }
    node->backprop = [](typename Tensor<S>::Node& self) {
      std::size_t off = 0;
      for (auto& parent : self.parents) {
        if (parent->requires_grad) {
          for (std::size_t i = 0; i < parent->grad.size(); ++i) {
            parent->grad[i] += self.grad[off + i];
          }
        }
        off += parent->data.size();
      }
    };
    return Tensor<S>(node);
  }
  // axis == 1: column concat.
  const int rows = parts[0].dim(0);
  int cols = 0;
  std::vector<typename Tensor<S>::NodePtr> nodes;
  std::vector<int> widths;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat");
    if (p.dim(0) != rows) {
      throw std::invalid_argument("concat: row mismatch " + shape_str(p.shape()));
    }
    widths.push_back(p.dim(1));
    cols += p.dim(1);
    nodes.push_back(p.node());
  }
  auto node = detail::make_op_node<S>({rows, cols}, std::move(nodes));
  int coff = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const int pw = widths[pi];
    for (int r = 0; r < rows; ++r) {
      std::copy(parts[pi].data().begin() + static_cast<std::size_t>(r) * pw,
                parts[pi].data().begin() + static_cast<std::size_t>(r + 1) * pw,
                node->data.begin() + static_cast<std::size_t>(r) * cols + coff);
    }
    coff += pw;
  }
  node->backprop = [rows, cols, widths](typename Tensor<S>::Node& self) {
    int coff = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& parent = *self.parents[pi];
      const int pw = widths[pi];
      if (parent.requires_grad) {
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < pw; ++c) {
            parent.grad[static_cast<std::size_t>(r) * pw + c] +=
                self.grad[static_cast<std::size_t>(r) * cols + coff + c];
          }
        }
      }
      coff += pw;
    }
  };
  return Tensor<S>(node);
}

/// Splits a matrix into equal parts along the column axis.
template <typename S>
std::vector<Tensor<S>> split_cols(const Tensor<S>& a, int parts) {
  detail::require_rank(a, 2, "split_cols");
  const int rows = a.dim(0), cols = a.dim(1);
  if (parts <= 0 || cols % parts != 0) {
    throw std::invalid_argument("split_cols: " + shape_str(a.shape()) + " into " +
                                std::to_string(parts) + " parts");
  }
  const int pw = cols / parts;
  std::vector<Tensor<S>> out;
  for (int pi = 0; pi < parts; ++pi) {
    auto node = detail::make_op_node<S>({rows, pw}, {a.node()});
    const int coff = pi * pw;
    for (int r = 0; r < rows; ++r) {
      std::copy(a.data().begin() + static_cast<std::size_t>(r) * cols + coff,
                a.data().begin() + static_cast<std::size_t>(r) * cols + coff + pw,
                node->data.begin() + static_cast<std::size_t>(r) * pw);
    }
    node->backprop = [rows, cols, pw, coff](typename Tensor<S>::Node& self) {
      auto& pa = *self.parents[0];
      if (!pa.requires_grad) return;
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < pw; ++c) {
          pa.grad[static_cast<std::size_t>(r) * cols + coff + c] +=
              self.grad[static_cast<std::size_t>(r) * pw + c];
        }
      }
    };
    out.emplace_back(node);
  }
  return out;
}

// --- row-wise normalizations (double accumulation keeps these stable and
// --- permutation-independent per row) ---

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
  detail::require_rank(a, 2, "softmax_rows");
  const int rows = a.dim(0), cols = a.dim(1);
  auto node = detail::make_op_node<S>(a.shape(), {a.node()});
  for (int r = 0; r < rows; ++r) {
    const S* x = a.data().data() + static_cast<std::size_t>(r) * cols;
    S* y = node->data.data() + static_cast<std::size_t>(r) * cols;
    S mx = x[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += static_cast<double>(y[c]);
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < cols; ++c) y[c] = static_cast<S>(y[c] * inv);
  }
  node->backprop = [rows, cols](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    for (int r = 0; r < rows; ++r) {
      const S* p = self.data.data() + static_cast<std::size_t>(r) * cols;
      const S* dy = self.grad.data() + static_cast<std::size_t>(r) * cols;
      S* dx = pa.grad.data() + static_cast<std::size_t>(r) * cols;
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += static_cast<double>(dy[c]) * p[c];
      for (int c = 0; c < cols; ++c) {
        dx[c] += static_cast<S>(p[c] * (static_cast<double>(dy[c]) - dot));
      }
    }
  };
  return Tensor<S>(node);
}

/// Per-row (x - mean) / sqrt(var + eps); affine scale/shift live outside.
template <typename S>
Tensor<S> layer_norm_rows(const Tensor<S>& a, double eps = 1e-5) {
  detail::require_rank(a, 2, "layer_norm_rows");
  if (eps <= 0.0) throw std::invalid_argument("layer_norm_rows: eps must be > 0");
  const int rows = a.dim(0), cols = a.dim(1);
  auto node = detail::make_op_node<S>(a.shape(), {a.node()});
  std::vector<double> inv_sigma(rows);
  for (int r = 0; r < rows; ++r) {
    const S* x = a.data().data() + static_cast<std::size_t>(r) * cols;
    S* y = node->data.data() + static_cast<std::size_t>(r) * cols;
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += static_cast<double>(x[c]);
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double d = static_cast<double>(x[c]) - mean;
      var += d * d;
    }
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = inv;
    for (int c = 0; c < cols; ++c) {
      y[c] = static_cast<S>((static_cast<double>(x[c]) - mean) * inv);
    }
  }
  node->backprop = [rows, cols, inv_sigma](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    for (int r = 0; r < rows; ++r) {
      const S* xhat = self.data.data() + static_cast<std::size_t>(r) * cols;
      const S* dy = self.grad.data() + static_cast<std::size_t>(r) * cols;
      S* dx = pa.grad.data() + static_cast<std::size_t>(r) * cols;
      double mean_dy = 0.0, mean_dyx = 0.0;
      for (int c = 0; c < cols; ++c) {
        mean_dy += static_cast<double>(dy[c]);
        mean_dyx += static_cast<double>(dy[c]) * xhat[c];
      }
      mean_dy /= cols;
      mean_dyx /= cols;
      for (int c = 0; c < cols; ++c) {
        dx[c] += static_cast<S>(
            inv_sigma[r] * (static_cast<double>(dy[c]) - mean_dy - xhat[c] * mean_dyx));
      }
    }
  };
  return Tensor<S>(node);
}

template <typename S>
Tensor<S> l2_normalize_rows(const Tensor<S>& a, double eps = 1e-10) {
  detail::require_rank(a, 2, "l2_normalize_rows");
  if (eps <= 0.0) throw std::invalid_argument("l2_normalize_rows: eps must be > 0");
  const int rows = a.dim(0), cols = a.dim(1);
  auto node = detail::make_op_node<S>(a.shape(), {a.node()});
  std::vector<double> inv_norm(rows);
  for (int r = 0; r < rows; ++r) {
    const S* x = a.data().data() + static_cast<std::size_t>(r) * cols;
    S* y = node->data.data() + static_cast<std::size_t>(r) * cols;
    double ss = 0.0;
    for (int c = 0; c < cols; ++c) ss += static_cast<double>(x[c]) * x[c];
    const double inv = 1.0 / std::sqrt(ss + eps);
    inv_norm[r] = inv;
    for (int c = 0; c < cols; ++c) y[c] = static_cast<S>(x[c] * inv);
  }
  node->backprop = [rows, cols, inv_norm](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    for (int r = 0; r < rows; ++r) {
      const S* x = pa.data.data() + static_cast<std::size_t>(r) * cols;
      const S* dy = self.grad.data() + static_cast<std::size_t>(r) * cols;
      S* dx = pa.grad.data() + static_cast<std::size_t>(r) * cols;
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += static_cast<double>(dy[c]) * x[c];
      const double inv = inv_norm[r];
      const double inv3 = inv * inv * inv;
      for (int c = 0; c < cols; ++c) {
        dx[c] += static_cast<S>(static_cast<double>(dy[c]) * inv - x[c] * dot * inv3);
      }
    }
  };
  return Tensor<S>(node);
}

// --- reductions ---

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  auto node = detail::make_op_node<S>({1}, {a.node()});
  double acc = 0.0;
  for (S v : a.data()) acc += static_cast<double>(v);
  node->data[0] = static_cast<S>(acc);
  node->backprop = [](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += self.grad[0];
  };
  return Tensor<S>(node);
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return mul_scalar(sum_all(a), static_cast<S>(1.0 / static_cast<double>(a.numel())));
}

/// Max over all elements; the gradient flows to the first maximizer.
template <typename S>
Tensor<S> max_all(const Tensor<S>& a) {
  auto node = detail::make_op_node<S>({1}, {a.node()});
  std::size_t arg = 0;
  for (std::size_t i = 1; i < a.numel(); ++i) {
    if (a.data()[i] > a.data()[arg]) arg = i;
  }
  node->data[0] = a.data()[arg];
  node->backprop = [arg](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.grad[arg] += self.grad[0];
  };
  return Tensor<S>(node);
}

// --- convolution ---

/// Valid 2-d convolution: input [Cin,H,W], kernel [Cout,Cin,kh,kw], strides
/// (sh, sw). The inner width loop uses explicit fma so every output column is
/// computed by an identical rounding sequence regardless of its position;
/// with kw == 1 this makes column shifts commute with the op bit-exactly.
template <typename S>
Tensor<S> conv2d_valid(const Tensor<S>& input, const Tensor<S>& kernel, int sh, int sw) {
  detail::require_rank(input, 3, "conv2d_valid");
  detail::require_rank(kernel, 4, "conv2d_valid");
  if (kernel.dim(1) != input.dim(0)) {
    throw std::invalid_argument("conv2d_valid: input " + shape_str(input.shape()) +
                                " vs kernel " + shape_str(kernel.shape()));
  }
  if (sh <= 0 || sw <= 0) throw std::invalid_argument("conv2d_valid: bad stride");
  const int cin = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh > H || kw > W) {
    throw std::invalid_argument("conv2d_valid: kernel " + shape_str(kernel.shape()) +
                                " larger than input " + shape_str(input.shape()));
  }
  const int Ho = (H - kh) / sh + 1;
  const int Wo = (W - kw) / sw + 1;
  auto node = detail::make_op_node<S>({cout, Ho, Wo}, {input.node(), kernel.node()});
  std::fill(node->data.begin(), node->data.end(), S(0));

  const S* in = input.data().data();
  const S* ker = kernel.data().data();
  S* out = node->data.data();
  for (int co = 0; co < cout; ++co) {
    for (int ho = 0; ho < Ho; ++ho) {
      S* orow = out + (static_cast<std::size_t>(co) * Ho + ho) * Wo;
      for (int ci = 0; ci < cin; ++ci) {
        for (int dh = 0; dh < kh; ++dh) {
          const S* irow =
              in + (static_cast<std::size_t>(ci) * H + ho * sh + dh) * W;
          for (int dw = 0; dw < kw; ++dw) {
            const S coeff =
                ker[((static_cast<std::size_t>(co) * cin + ci) * kh + dh) * kw + dw];
            if (sw == 1) {
              for (int wo = 0; wo < Wo; ++wo) {
                orow[wo] = std::fma(coeff, irow[wo + dw], orow[wo]);
              }
            } else {
              for (int wo = 0; wo < Wo; ++wo) {
                orow[wo] = std::fma(coeff, irow[wo * sw + dw], orow[wo]);
              }
            }
          }
        }
      }
    }
  }

  node->backprop = [cin, H, W, cout, kh, kw, sh, sw, Ho, Wo](
                       typename Tensor<S>::Node& self) {
    auto& pin = *self.parents[0];
    auto& pker = *self.parents[1];
    const S* dout = self.grad.data();
    if (pin.requires_grad) {
      const S* ker = pker.data.data();
      for (int co = 0; co < cout; ++co) {
        for (int ho = 0; ho < Ho; ++ho) {
          const S* drow = dout + (static_cast<std::size_t>(co) * Ho + ho) * Wo;
          for (int ci = 0; ci < cin; ++ci) {
            for (int dh = 0; dh < kh; ++dh) {
              S* irow = pin.grad.data() +
                        (static_cast<std::size_t>(ci) * H + ho * sh + dh) * W;
              for (int dw = 0; dw < kw; ++dw) {
                const S coeff =
                    ker[((static_cast<std::size_t>(co) * cin + ci) * kh + dh) * kw + dw];
                for (int wo = 0; wo < Wo; ++wo) {
                  irow[wo * sw + dw] += coeff * drow[wo];
                }
              }
            }
          }
        }
      }
    }
    if (pker.requires_grad) {
      const S* in = pin.data.data();
      for (int co = 0; co < cout; ++co) {
        for (int ci = 0; ci < cin; ++ci) {
          for (int dh = 0; dh < kh; ++dh) {
            for (int dw = 0; dw < kw; ++dw) {
              double acc = 0.0;
              for (int ho = 0; ho < Ho; ++ho) {
                const S* drow = dout + (static_cast<std::size_t>(co) * Ho + ho) * Wo;
                const S* irow =
                    in + (static_cast<std::size_t>(ci) * H + ho * sh + dh) * W;
                for (int wo = 0; wo < Wo; ++wo) {
                  acc += static_cast<double>(drow[wo]) * irow[wo * sw + dw];
                }
              }
              pker.grad[((static_cast<std::size_t>(co) * cin + ci) * kh + dh) * kw +
                        dw] += static_cast<S>(acc);
            }
          }
        }
      }
    }
  };
  return Tensor<S>(node);
}

/// x[C,H,W] + b[C], broadcast over each channel plane. A single IEEE add per
/// element, so column shifts commute with it bit-exactly.
template <typename S>
Tensor<S> add_channel_bias(const Tensor<S>& x, const Tensor<S>& b) {
  detail::require_rank(x, 3, "add_channel_bias");
  if (b.rank() != 1 || b.dim(0) != x.dim(0)) {
    throw std::invalid_argument("add_channel_bias: " + shape_str(x.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const int C = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  auto node = detail::make_op_node<S>(x.shape(), {x.node(), b.node()});
  for (int c = 0; c < C; ++c) {
    const S bias = b.data()[c];
    for (std::size_t i = 0; i < plane; ++i) {
      node->data[c * plane + i] = x.data()[c * plane + i] + bias;
    }
  }
  node->backprop = [C, plane](typename Tensor<S>::Node& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          acc += static_cast<double>(self.grad[c * plane + i]);
        }
        pb.grad[c] += static_cast<S>(acc);
      }
    }
  };
  return Tensor<S>(node);
}

// --- NetVLAD aggregation ---

/// out[k,:] = sum_i assign[i,k] * (s[i,:] - centers[k,:]); assign [w,K],
/// s [w,c], centers [K,c] -> [K,c]. Fused residual-first form: columns lying
/// exactly on a center contribute exact zeros, which the factored
/// gemm-minus-rescaled-centers form cannot guarantee in float.
template <typename S>
Tensor<S> vlad_aggregate(const Tensor<S>& assign, const Tensor<S>& s,
                         const Tensor<S>& centers) {
  detail::require_rank(assign, 2, "vlad_aggregate");
  detail::require_rank(s, 2, "vlad_aggregate");
  detail::require_rank(centers, 2, "vlad_aggregate");
  const int w = assign.dim(0), K = assign.dim(1), c = s.dim(1);
  if (s.dim(0) != w || centers.dim(0) != K || centers.dim(1) != c) {
    throw std::invalid_argument("vlad_aggregate: assign " + shape_str(assign.shape()) +
                                ", s " + shape_str(s.shape()) + ", centers " +
                                shape_str(centers.shape()));
  }
  auto node = detail::make_op_node<S>({K, c}, {assign.node(), s.node(), centers.node()});
  std::vector<double> acc(c);
  for (int k = 0; k < K; ++k) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const S* ck = centers.data().data() + static_cast<std::size_t>(k) * c;
    for (int i = 0; i < w; ++i) {
      const double a = static_cast<double>(assign.data()[static_cast<std::size_t>(i) * K + k]);
      const S* zi = s.data().data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) {
        acc[j] += a * (static_cast<double>(zi[j]) - static_cast<double>(ck[j]));
      }
    }
    S* out = node->data.data() + static_cast<std::size_t>(k) * c;
    for (int j = 0; j < c; ++j) out[j] = static_cast<S>(acc[j]);
  }
  node->backprop = [w, K, c](typename Tensor<S>::Node& self) {
    auto& pa = *self.parents[0];
    auto& ps = *self.parents[1];
    auto& pc = *self.parents[2];
    const S* dout = self.grad.data();
    if (pa.requires_grad) {
      for (int i = 0; i < w; ++i) {
        const S* zi = ps.data.data() + static_cast<std::size_t>(i) * c;
        for (int k = 0; k < K; ++k) {
          const S* ck = pc.data.data() + static_cast<std::size_t>(k) * c;
          const S* dk = dout + static_cast<std::size_t>(k) * c;
          double acc = 0.0;
          for (int j = 0; j < c; ++j) {
            acc += static_cast<double>(dk[j]) *
                   (static_cast<double>(zi[j]) - static_cast<double>(ck[j]));
          }
          pa.grad[static_cast<std::size_t>(i) * K + k] += static_cast<S>(acc);
        }
      }
    }
    if (ps.requires_grad) {
      // dS = A * dOut
      detail::EigenMap<S>(ps.grad.data(), w, c).noalias() +=
          detail::as_matrix<S>(pa, w, K) * detail::grad_matrix<S>(self, K, c);
    }
    if (pc.requires_grad) {
      for (int k = 0; k < K; ++k) {
        double mass = 0.0;
        for (int i = 0; i < w; ++i) {
          mass += static_cast<double>(pa.data[static_cast<std::size_t>(i) * K + k]);
        }
        const S* dk = dout + static_cast<std::size_t>(k) * c;
        S* gk = pc.grad.data() + static_cast<std::size_t>(k) * c;
        for (int j = 0; j < c; ++j) gk[j] -= static_cast<S>(mass * dk[j]);
      }
    }
  };
  return Tensor<S>(node);
}

// --- backward driver ---

/// Populates grad on every tensor the loss depends on. The topological order
/// (the tape) is rebuilt from the graph; each node is visited exactly once.
template <typename S>
void backward(const Tensor<S>& loss) {
  if (!loss.defined() || !loss.node()->requires_grad) {
    throw std::invalid_argument("backward: tensor is detached from any parameter");
  }
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  }
  using Node = typename Tensor<S>::Node;
  std::vector<Node*> tape;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  visited.insert(loss.node().get());
  stack.emplace_back(loss.node().get(), 0);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* parent = n->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      tape.push_back(n);
      stack.pop_back();
    }
  }
  // Post-order: parents precede dependents, each node exactly once. Zeroing
  // here also discards stale grads from any earlier pass over shared nodes.
  for (Node* n : tape) n->grad.assign(n->data.size(), S(0));
  loss.node()->grad[0] = S(1);
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->requires_grad) n->backprop(*n);
  }
}

}  // namespace lpr
