#include "drf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "drf/errors.hpp"

namespace drf {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  const char* op = "leaf";

  std::size_t size() const { return data.size(); }
};

namespace {
thread_local int no_grad_depth = 0;
}

}  // namespace detail

using detail::Node;

namespace {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void ensure_grad(Node& node) {
  if (node.grad.size() != node.data.size()) {
    node.grad.assign(node.data.size(), 0.0);
  }
}

// Accumulate into a parent's gradient only if it participates in the graph.
inline void accum(Node& node, std::size_t index, double value) {
  if (!node.requires_grad) return;
  node.grad[index] += value;
}

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> data,
                                bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

bool any_tracked(const std::vector<std::shared_ptr<Node>>& parents) {
  for (const auto& p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

// Result node; drops the tape when untracked or inside a NoGradGuard.
std::shared_ptr<Node> make_op_node(const char* op, Shape shape,
                                   std::vector<double> data,
                                   std::vector<std::shared_ptr<Node>> parents,
                                   std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (detail::no_grad_depth == 0 && any_tracked(parents)) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return node;
}

// Trailing-axis broadcast bookkeeping: per output axis, the element stride
// into each operand (0 where that operand has size 1).
struct BroadcastPlan {
  Shape out_shape;
  std::vector<std::size_t> a_stride;
  std::vector<std::size_t> b_stride;

  std::size_t map_a(std::size_t flat) const { return map(flat, a_stride); }
  std::size_t map_b(std::size_t flat) const { return map(flat, b_stride); }

 private:
  std::size_t map(std::size_t flat, const std::vector<std::size_t>& stride) const {
    std::size_t idx = 0;
    for (std::size_t axis = out_shape.size(); axis-- > 0;) {
      const std::size_t dim = out_shape[axis];
      idx += (flat % dim) * stride[axis];
      flat /= dim;
    }
    return idx;
  }
};

BroadcastPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  BroadcastPlan plan;
  plan.out_shape.assign(rank, 1);
  plan.a_stride.assign(rank, 0);
  plan.b_stride.assign(rank, 0);

  std::vector<std::size_t> a_elem(rank, 0), b_elem(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t axis = rank - 1 - i;
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " +
                       shape_to_string(a) + " with " + shape_to_string(b));
    }
    plan.out_shape[axis] = std::max(da, db);
    a_elem[axis] = da;
    b_elem[axis] = db;
  }
  std::size_t sa = 1, sb = 1;
  for (std::size_t axis = rank; axis-- > 0;) {
    plan.a_stride[axis] = a_elem[axis] == 1 ? 0 : sa;
    plan.b_stride[axis] = b_elem[axis] == 1 ? 0 : sb;
    sa *= a_elem[axis];
    sb *= b_elem[axis];
  }
  return plan;
}

// outer * mid * inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, mid = 1, inner = 1;
};

AxisSplit axis_split(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.mid = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_to_string(shape));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

// ---- Tensor handle ----

Tensor::Tensor() = default;
Tensor::Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

Tensor Tensor::constant(Shape shape, double fill) {
  const std::size_t n = numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, fill), false));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  return Tensor(make_leaf(std::move(shape), std::move(data), false));
}

Tensor Tensor::scalar(double value) {
  return Tensor(make_leaf({1}, {value}, false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  return Tensor(make_leaf(std::move(shape), std::move(data), true));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }
std::size_t Tensor::rank() const { return node_->shape.size(); }
const std::vector<double>& Tensor::data() const { return node_->data; }
std::vector<double>& Tensor::mutable_data() { return node_->data; }
bool Tensor::tracked() const { return node_ && node_->requires_grad; }

double Tensor::value() const {
  if (size() != 1) {
    throw ShapeError("value() requires a scalar, got shape " +
                     shape_to_string(shape()));
  }
  return node_->data[0];
}

const std::vector<double>& Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  node_->grad.assign(node_->data.size(), 0.0);
}

NoGradGuard::NoGradGuard() { ++detail::no_grad_depth; }
NoGradGuard::~NoGradGuard() { --detail::no_grad_depth; }

void backward(const Tensor& loss) {
  if (!loss.defined()) {
    throw ShapeError("backward: undefined tensor");
  }
  if (loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     shape_to_string(loss.shape()));
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) {
    return;  // loss does not depend on any tracked tensor
  }

  // Iterative postorder over parent edges: parents land before children, so
  // the reversed list propagates child gradients before parent backprops run.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Item {
    Node* node;
    std::size_t next;
  };
  std::vector<Item> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    Item& top = stack.back();
    if (top.next < top.node->parents.size()) {
      Node* parent = top.node->parents[top.next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  for (Node* node : order) ensure_grad(*node);
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop) node->backprop(*node);
  }
}

// ---- elementwise / broadcast ----

namespace {

Tensor broadcast_binary(const char* op, const Tensor& a, const Tensor& b,
                        double (*fwd)(double, double),
                        void (*bwd)(double, double, double, double*, double*)) {
  auto pa = a.node();
  auto pb = b.node();
  BroadcastPlan plan = broadcast_plan(op, pa->shape, pb->shape);
  const std::size_t n = numel(plan.out_shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(pa->data[plan.map_a(i)], pb->data[plan.map_b(i)]);
  }
  auto backprop = [pa, pb, plan, bwd](Node& self) {
    for (std::size_t i = 0; i < self.size(); ++i) {
      const double g = self.grad[i];
      if (g == 0.0) continue;
      const std::size_t ia = plan.map_a(i);
      const std::size_t ib = plan.map_b(i);
      double ga = 0.0, gb = 0.0;
      bwd(pa->data[ia], pb->data[ib], g, &ga, &gb);
      accum(*pa, ia, ga);
      accum(*pb, ib, gb);
    }
  };
  return Tensor(make_op_node(op, plan.out_shape, std::move(out), {pa, pb},
                             std::move(backprop)));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double* ga, double* gb) {
        *ga = g;
        *gb = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double* ga, double* gb) {
        *ga = g;
        *gb = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double* ga, double* gb) {
        *ga = g * y;
        *gb = g * x;
      });
}

Tensor scale(const Tensor& x, double factor) {
  auto px = x.node();
  std::vector<double> out(px->data);
  for (double& v : out) v *= factor;
  auto backprop = [px, factor](Node& self) {
    for (std::size_t i = 0; i < self.size(); ++i) {
      accum(*px, i, self.grad[i] * factor);
    }
  };
  return Tensor(make_op_node("scale", px->shape, std::move(out), {px},
                             std::move(backprop)));
}

Tensor add_scalar(const Tensor& x, double value) {
  auto px = x.node();
  std::vector<double> out(px->data);
  for (double& v : out) v += value;
  auto backprop = [px](Node& self) {
    for (std::size_t i = 0; i < self.size(); ++i) {
      accum(*px, i, self.grad[i]);
    }
  };
  return Tensor(make_op_node("add_scalar", px->shape, std::move(out), {px},
                             std::move(backprop)));
}

Tensor relu(const Tensor& x) {
  auto px = x.node();
  std::vector<double> out(px->data);
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto backprop = [px](Node& self) {
    for (std::size_t i = 0; i < self.size(); ++i) {
      if (px->data[i] > 0.0) accum(*px, i, self.grad[i]);
    }
  };
  return Tensor(make_op_node("relu", px->shape, std::move(out), {px},
                             std::move(backprop)));
}

Tensor sigmoid(const Tensor& x) {
  auto px = x.node();
  std::vector<double> out(px->data);
  for (double& v : out) v = stable_sigmoid(v);
  auto backprop = [px](Node& self) {
    for (std::size_t i = 0; i < self.size(); ++i) {
      const double s = self.data[i];
      accum(*px, i, self.grad[i] * s * (1.0 - s));
    }
  };
  return Tensor(make_op_node("sigmoid", px->shape, std::move(out), {px},
                             std::move(backprop)));
}

// ---- shape ----

Tensor reshape(const Tensor& x, Shape shape) {
  auto px = x.node();
  if (numel(shape) != px->size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(px->shape) +
                     " as " + shape_to_string(shape));
  }
  std::vector<double> out(px->data);
  auto backprop = [px](Node& self) {
    for (std::size_t i = 0; i < self.size(); ++i) {
      accum(*px, i, self.grad[i]);
    }
  };
  return Tensor(make_op_node("reshape", std::move(shape), std::move(out), {px},
                             std::move(backprop)));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) {
    throw ShapeError("concat: no inputs");
  }
  const Shape& first = parts.front().shape();
  check_axis("concat", first, axis);
  std::size_t total_mid = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) {
      throw ShapeError("concat: rank mismatch between " +
                       shape_to_string(first) + " and " + shape_to_string(s));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat: shape mismatch between " +
                         shape_to_string(first) + " and " + shape_to_string(s));
      }
    }
    total_mid += s[axis];
  }

  Shape out_shape = first;
  out_shape[axis] = total_mid;
  const AxisSplit out_split = axis_split(out_shape, axis);
  std::vector<double> out(numel(out_shape));

  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& t : parts) {
    parents.push_back(t.node());
    offsets.push_back(offset);
    const AxisSplit split = axis_split(t.shape(), axis);
    const auto& src = t.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t j = 0; j < split.mid; ++j) {
        const std::size_t src_base = (o * split.mid + j) * split.inner;
        const std::size_t dst_base =
            (o * out_split.mid + offset + j) * out_split.inner;
        std::copy_n(src.begin() + src_base, split.inner,
                    out.begin() + dst_base);
      }
    }
    offset += split.mid;
  }

  auto backprop = [parents, offsets, out_split, axis](Node& self) {
    for (std::size_t p = 0; p < parents.size(); ++p) {
      Node& parent = *parents[p];
      if (!parent.requires_grad) continue;
      const AxisSplit split = axis_split(parent.shape, axis);
      for (std::size_t o = 0; o < split.outer; ++o) {
        for (std::size_t j = 0; j < split.mid; ++j) {
          const std::size_t src_base =
              (o * out_split.mid + offsets[p] + j) * out_split.inner;
          const std::size_t dst_base = (o * split.mid + j) * split.inner;
          for (std::size_t i = 0; i < split.inner; ++i) {
            parent.grad[dst_base + i] += self.grad[src_base + i];
          }
        }
      }
    }
  };
  return Tensor(make_op_node("concat", std::move(out_shape), std::move(out),
                             std::move(parents), std::move(backprop)));
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t length) {
  auto px = x.node();
  check_axis("slice", px->shape, axis);
  if (start + length > px->shape[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds axis " +
                     std::to_string(axis) + " of " +
                     shape_to_string(px->shape));
  }
  Shape out_shape = px->shape;
  out_shape[axis] = length;
  const AxisSplit in_split = axis_split(px->shape, axis);
  std::vector<double> out(numel(out_shape));
  for (std::size_t o = 0; o < in_split.outer; ++o) {
    for (std::size_t j = 0; j < length; ++j) {
      const std::size_t src_base = (o * in_split.mid + start + j) * in_split.inner;
      const std::size_t dst_base = (o * length + j) * in_split.inner;
      std::copy_n(px->data.begin() + src_base, in_split.inner,
                  out.begin() + dst_base);
    }
  }
  auto backprop = [px, in_split, start, length](Node& self) {
    for (std::size_t o = 0; o < in_split.outer; ++o) {
      for (std::size_t j = 0; j < length; ++j) {
        const std::size_t dst_base =
            (o * in_split.mid + start + j) * in_split.inner;
        const std::size_t src_base = (o * length + j) * in_split.inner;
        for (std::size_t i = 0; i < in_split.inner; ++i) {
          accum(*px, dst_base + i, self.grad[src_base + i]);
        }
      }
    }
  };
  return Tensor(make_op_node("slice", std::move(out_shape), std::move(out),
                             {px}, std::move(backprop)));
}

Tensor select_scalar(const Tensor& x, std::size_t flat_index) {
  auto px = x.node();
  if (flat_index >= px->size()) {
    throw ShapeError("select_scalar: index " + std::to_string(flat_index) +
                     " out of range for shape " + shape_to_string(px->shape));
  }
  auto backprop = [px, flat_index](Node& self) {
    accum(*px, flat_index, self.grad[0]);
  };
  return Tensor(make_op_node("select_scalar", {1}, {px->data[flat_index]},
                             {px}, std::move(backprop)));
}

// ---- reductions ----

Tensor reduce_max(const Tensor& x, std::size_t axis) {
  auto px = x.node();
  check_axis("reduce_max", px->shape, axis);
  const AxisSplit split = axis_split(px->shape, axis);
  Shape out_shape;
  for (std::size_t i = 0; i < px->shape.size(); ++i) {
    if (i != axis) out_shape.push_back(px->shape[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  std::vector<double> out(split.outer * split.inner);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      std::size_t best = (o * split.mid) * split.inner + i;
      double best_v = px->data[best];
      for (std::size_t j = 1; j < split.mid; ++j) {
        const std::size_t idx = (o * split.mid + j) * split.inner + i;
        if (px->data[idx] > best_v) {
          best_v = px->data[idx];
          best = idx;
        }
      }
      out[o * split.inner + i] = best_v;
      argmax[o * split.inner + i] = best;
    }
  }
  auto backprop = [px, argmax](Node& self) {
    for (std::size_t i = 0; i < self.size(); ++i) {
      accum(*px, argmax[i], self.grad[i]);
    }
  };
  return Tensor(make_op_node("reduce_max", std::move(out_shape),
                             std::move(out), {px}, std::move(backprop)));
}

Tensor reduce_mean(const Tensor& x, std::size_t axis) {
  auto px = x.node();
  check_axis("reduce_mean", px->shape, axis);
  const AxisSplit split = axis_split(px->shape, axis);
  Shape out_shape;
  for (std::size_t i = 0; i < px->shape.size(); ++i) {
    if (i != axis) out_shape.push_back(px->shape[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  const double inv = 1.0 / static_cast<double>(split.mid);
  std::vector<double> out(split.outer * split.inner, 0.0);
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t j = 0; j < split.mid; ++j) {
      for (std::size_t i = 0; i < split.inner; ++i) {
        out[o * split.inner + i] +=
            px->data[(o * split.mid + j) * split.inner + i];
      }
    }
  }
  for (double& v : out) v *= inv;

  auto backprop = [px, split, inv](Node& self) {
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t j = 0; j < split.mid; ++j) {
        for (std::size_t i = 0; i < split.inner; ++i) {
          accum(*px, (o * split.mid + j) * split.inner + i,
                self.grad[o * split.inner + i] * inv);
        }
      }
    }
  };
  return Tensor(make_op_node("reduce_mean", std::move(out_shape),
                             std::move(out), {px}, std::move(backprop)));
}

Tensor mean_all(const Tensor& x) {
  auto px = x.node();
  const std::size_t n = px->size();
  if (n == 0) {
    throw ShapeError("mean_all: empty tensor");
  }
  double sum = 0.0;
  for (double v : px->data) sum += v;
  const double inv = 1.0 / static_cast<double>(n);
  auto backprop = [px, inv](Node& self) {
    const double g = self.grad[0] * inv;
    for (std::size_t i = 0; i < px->size(); ++i) accum(*px, i, g);
  };
  return Tensor(
      make_op_node("mean_all", {1}, {sum * inv}, {px}, std::move(backprop)));
}

// ---- neural-net ops ----

namespace {

Tensor linear_impl(const Tensor& x, const Tensor& w, const Tensor* bias) {
  auto px = x.node();
  auto pw = w.node();
  if (pw->shape.size() != 2) {
    throw ShapeError("linear: weight must be rank 2, got " +
                     shape_to_string(pw->shape));
  }
  const std::size_t out_dim = pw->shape[0];
  const std::size_t in_dim = pw->shape[1];

  std::size_t batch = 1;
  bool batched = false;
  if (px->shape.size() == 1) {
    if (px->shape[0] != in_dim) {
      throw ShapeError("linear: input " + shape_to_string(px->shape) +
                       " incompatible with weight " + shape_to_string(pw->shape));
    }
  } else if (px->shape.size() == 2) {
    if (px->shape[1] != in_dim) {
      throw ShapeError("linear: input " + shape_to_string(px->shape) +
                       " incompatible with weight " + shape_to_string(pw->shape));
    }
    batch = px->shape[0];
    batched = true;
  } else {
    throw ShapeError("linear: input must be rank 1 or 2, got " +
                     shape_to_string(px->shape));
  }

  std::shared_ptr<Node> pb;
  if (bias) {
    pb = bias->node();
    if (pb->shape.size() != 1 || pb->shape[0] != out_dim) {
      throw ShapeError("linear: bias " + shape_to_string(pb->shape) +
                       " incompatible with weight " + shape_to_string(pw->shape));
    }
  }

  Shape out_shape = batched ? Shape{batch, out_dim} : Shape{out_dim};
  std::vector<double> out(batch * out_dim, 0.0);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = pb ? pb->data[o] : 0.0;
      const double* wr = pw->data.data() + o * in_dim;
      const double* xr = px->data.data() + n * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) acc += wr[i] * xr[i];
      out[n * out_dim + o] = acc;
    }
  }

  std::vector<std::shared_ptr<Node>> parents{px, pw};
  if (pb) parents.push_back(pb);
  auto backprop = [px, pw, pb, batch, out_dim, in_dim](Node& self) {
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double g = self.grad[n * out_dim + o];
        if (g == 0.0) continue;
        for (std::size_t i = 0; i < in_dim; ++i) {
          accum(*px, n * in_dim + i, g * pw->data[o * in_dim + i]);
          accum(*pw, o * in_dim + i, g * px->data[n * in_dim + i]);
        }
        if (pb) accum(*pb, o, g);
      }
    }
  };
  return Tensor(make_op_node("linear", std::move(out_shape), std::move(out),
                             std::move(parents), std::move(backprop)));
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w) {
  return linear_impl(x, w, nullptr);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return linear_impl(x, w, &bias);
}

namespace {

Tensor conv2d_impl(const Tensor& x, const Tensor& kernel, const Tensor* bias,
                   std::size_t stride, std::size_t padding) {
  auto px = x.node();
  auto pk = kernel.node();
  if (px->shape.size() != 4 || pk->shape.size() != 4) {
    throw ShapeError("conv2d: expected input [n,c,h,w] and kernel "
                     "[co,ci,kh,kw], got " +
                     shape_to_string(px->shape) + " and " +
                     shape_to_string(pk->shape));
  }
  const std::size_t n = px->shape[0], ci = px->shape[1], h = px->shape[2],
                    w = px->shape[3];
  const std::size_t co = pk->shape[0], kci = pk->shape[1], kh = pk->shape[2],
                    kw = pk->shape[3];
  if (ci != kci) {
    throw ShapeError("conv2d: input channels of " + shape_to_string(px->shape) +
                     " do not match kernel " + shape_to_string(pk->shape));
  }
  if (stride == 0) {
    throw ShapeError("conv2d: stride must be positive");
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw ShapeError("conv2d: kernel " + shape_to_string(pk->shape) +
                     " larger than padded input " + shape_to_string(px->shape));
  }
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;

  std::shared_ptr<Node> pb;
  if (bias) {
    pb = bias->node();
    if (pb->shape.size() != 1 || pb->shape[0] != co) {
      throw ShapeError("conv2d: bias " + shape_to_string(pb->shape) +
                       " incompatible with kernel " + shape_to_string(pk->shape));
    }
  }

  std::vector<double> out(n * co * ho * wo, 0.0);
  const auto in_at = [&](std::size_t b, std::size_t c, std::size_t y,
                         std::size_t xx) {
    return px->data[((b * ci + c) * h + y) * w + xx];
  };
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < co; ++oc) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = pb ? pb->data[oc] : 0.0;
          for (std::size_t c = 0; c < ci; ++c) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t y =
                  static_cast<std::ptrdiff_t>(oy * stride + ky) -
                  static_cast<std::ptrdiff_t>(padding);
              if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t xx =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) -
                    static_cast<std::ptrdiff_t>(padding);
                if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += in_at(b, c, static_cast<std::size_t>(y),
                             static_cast<std::size_t>(xx)) *
                       pk->data[((oc * ci + c) * kh + ky) * kw + kx];
              }
            }
          }
          out[((b * co + oc) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }

  std::vector<std::shared_ptr<Node>> parents{px, pk};
  if (pb) parents.push_back(pb);
  auto backprop = [px, pk, pb, n, ci, h, w, co, kh, kw, ho, wo, stride,
                   padding](Node& self) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t oc = 0; oc < co; ++oc) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const double g = self.grad[((b * co + oc) * ho + oy) * wo + ox];
            if (g == 0.0) continue;
            if (pb) accum(*pb, oc, g);
            for (std::size_t c = 0; c < ci; ++c) {
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t y =
                    static_cast<std::ptrdiff_t>(oy * stride + ky) -
                    static_cast<std::ptrdiff_t>(padding);
                if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t xx =
                      static_cast<std::ptrdiff_t>(ox * stride + kx) -
                      static_cast<std::ptrdiff_t>(padding);
                  if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                  const std::size_t in_idx =
                      ((b * ci + c) * h + static_cast<std::size_t>(y)) * w +
                      static_cast<std::size_t>(xx);
                  const std::size_t k_idx =
                      ((oc * ci + c) * kh + ky) * kw + kx;
                  accum(*px, in_idx, g * pk->data[k_idx]);
                  accum(*pk, k_idx, g * px->data[in_idx]);
                }
              }
            }
          }
        }
      }
    }
  };
  return Tensor(make_op_node("conv2d", {n, co, ho, wo}, std::move(out),
                             std::move(parents), std::move(backprop)));
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  return conv2d_impl(x, kernel, &bias, stride, padding);
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride,
              std::size_t padding) {
  return conv2d_impl(x, kernel, nullptr, stride, padding);
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t padding) {
  auto px = x.node();
  auto pk = kernel.node();
  if (px->shape.size() != 2 || pk->shape.size() != 3) {
    throw ShapeError("conv1d: expected input [c,len] and kernel [co,ci,k], "
                     "got " +
                     shape_to_string(px->shape) + " and " +
                     shape_to_string(pk->shape));
  }
  const std::size_t ci = px->shape[0], len = px->shape[1];
  const std::size_t co = pk->shape[0], kci = pk->shape[1], kk = pk->shape[2];
  if (ci != kci || len + 2 * padding < kk) {
    throw ShapeError("conv1d: input " + shape_to_string(px->shape) +
                     " incompatible with kernel " + shape_to_string(pk->shape));
  }
  const std::size_t lo = len + 2 * padding - kk + 1;

  std::vector<double> out(co * lo, 0.0);
  for (std::size_t oc = 0; oc < co; ++oc) {
    for (std::size_t op = 0; op < lo; ++op) {
      double acc = 0.0;
      for (std::size_t c = 0; c < ci; ++c) {
        for (std::size_t k = 0; k < kk; ++k) {
          const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(op + k) -
                                   static_cast<std::ptrdiff_t>(padding);
          if (p < 0 || p >= static_cast<std::ptrdiff_t>(len)) continue;
          acc += px->data[c * len + static_cast<std::size_t>(p)] *
                 pk->data[(oc * ci + c) * kk + k];
        }
      }
      out[oc * lo + op] = acc;
    }
  }
  auto backprop = [px, pk, ci, len, co, kk, lo, padding](Node& self) {
    for (std::size_t oc = 0; oc < co; ++oc) {
      for (std::size_t op = 0; op < lo; ++op) {
        const double g = self.grad[oc * lo + op];
        if (g == 0.0) continue;
        for (std::size_t c = 0; c < ci; ++c) {
          for (std::size_t k = 0; k < kk; ++k) {
            const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(op + k) -
                                     static_cast<std::ptrdiff_t>(padding);
            if (p < 0 || p >= static_cast<std::ptrdiff_t>(len)) continue;
            const std::size_t in_idx = c * len + static_cast<std::size_t>(p);
            const std::size_t k_idx = (oc * ci + c) * kk + k;
            accum(*px, in_idx, g * pk->data[k_idx]);
            accum(*pk, k_idx, g * px->data[in_idx]);
          }
        }
      }
    }
  };
  return Tensor(make_op_node("conv1d", {co, lo}, std::move(out), {px, pk},
                             std::move(backprop)));
}

Tensor max_pool2d(const Tensor& x, std::size_t kh, std::size_t kw,
                  std::size_t sh, std::size_t sw) {
  auto px = x.node();
  if (px->shape.size() != 4) {
    throw ShapeError("max_pool2d: expected input [n,c,h,w], got " +
                     shape_to_string(px->shape));
  }
  const std::size_t n = px->shape[0], c = px->shape[1], h = px->shape[2],
                    w = px->shape[3];
  if (kh == 0 || kw == 0 || sh == 0 || sw == 0 || kh > h || kw > w) {
    throw ShapeError("max_pool2d: window " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " invalid for input " +
                     shape_to_string(px->shape));
  }
  const std::size_t ho = (h - kh) / sh + 1;
  const std::size_t wo = (w - kw) / sw + 1;

  std::vector<double> out(n * c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          std::size_t best = ((b * c + ch) * h + oy * sh) * w + ox * sw;
          double best_v = px->data[best];
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::size_t idx =
                  ((b * c + ch) * h + oy * sh + ky) * w + ox * sw + kx;
              if (px->data[idx] > best_v) {
                best_v = px->data[idx];
                best = idx;
              }
            }
          }
          const std::size_t out_idx = ((b * c + ch) * ho + oy) * wo + ox;
          out[out_idx] = best_v;
          argmax[out_idx] = best;
        }
      }
    }
  }
  auto backprop = [px, argmax](Node& self) {
    for (std::size_t i = 0; i < self.size(); ++i) {
      accum(*px, argmax[i], self.grad[i]);
    }
  };
  return Tensor(make_op_node("max_pool2d", {n, c, ho, wo}, std::move(out),
                             {px}, std::move(backprop)));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  auto pl = logits.node();
  if (pl->shape.size() != 1 || label >= pl->shape[0]) {
    throw ShapeError("softmax_cross_entropy: logits " +
                     shape_to_string(pl->shape) + " with label " +
                     std::to_string(label));
  }
  const std::size_t k = pl->shape[0];
  double max_logit = pl->data[0];
  for (double v : pl->data) max_logit = std::max(max_logit, v);
  double sum = 0.0;
  for (double v : pl->data) sum += std::exp(v - max_logit);
  const double lse = max_logit + std::log(sum);
  const double loss = lse - pl->data[label];

  auto backprop = [pl, label, lse, k](Node& self) {
    const double g = self.grad[0];
    for (std::size_t i = 0; i < k; ++i) {
      const double p = std::exp(pl->data[i] - lse);
      accum(*pl, i, g * (p - (i == label ? 1.0 : 0.0)));
    }
  };
  return Tensor(make_op_node("softmax_cross_entropy", {1}, {loss}, {pl},
                             std::move(backprop)));
}

Tensor pairwise_l2(const Tensor& x) {
  auto px = x.node();
  if (px->shape.size() != 2) {
    throw ShapeError("pairwise_l2: expected [n,d], got " +
                     shape_to_string(px->shape));
  }
  const std::size_t n = px->shape[0], d = px->shape[1];
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = px->data[i * d + k] - px->data[j * d + k];
        acc += diff * diff;
      }
      out[i * n + j] = std::sqrt(acc);
    }
  }
  auto backprop = [px, n, d](Node& self) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double g = self.grad[i * n + j];
        if (g == 0.0 || i == j) continue;
        const double dist = self.data[i * n + j];
        if (dist == 0.0) continue;  // subgradient 0 at coincident rows
        const double coeff = g / dist;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = px->data[i * d + k] - px->data[j * d + k];
          accum(*px, i * d + k, coeff * diff);
          accum(*px, j * d + k, -coeff * diff);
        }
      }
    }
  };
  return Tensor(make_op_node("pairwise_l2", {n, n}, std::move(out), {px},
                             std::move(backprop)));
}

double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& params, double eps) {
  for (Tensor p : params) {
    p.zero_grad();
  }
  Tensor loss = f();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    if (p.grad().empty()) {
      analytic.emplace_back(p.size(), 0.0);
    } else {
      analytic.push_back(p.grad());
    }
  }

  double max_err = 0.0;
  NoGradGuard guard;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor param = params[pi];
    auto& data = param.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = f().value();
      data[i] = saved - eps;
      const double down = f().value();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace drf
