#include "timemae/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

TIMEMAE_BEGIN_NAMESPACE

namespace {

thread_local std::uint64_t tape_counter = 0;
thread_local bool grad_mode = true;

detail::Node& require(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ContractError("operation on an undefined tensor");
  return *node;
}

std::shared_ptr<detail::Node> new_leaf(Shape shape, std::vector<Real> data, bool requires_grad) {
  if (data.size() != shape_numel(shape)) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->seq = ++tape_counter;
  node->op = "leaf";
  return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<Real>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), Real(0));
  return grad;
}

void Node::accumulate(std::span<const Real> g) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad));
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<Real>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<Real> data, bool requires_grad) {
  return Tensor(new_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return Tensor(new_leaf(Shape{}, std::vector<Real>{value}, requires_grad));
}

const Shape& Tensor::shape() const { return require(node_).shape; }

std::size_t Tensor::dim(int axis) const {
  const auto& s = shape();
  int r = static_cast<int>(s.size());
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return require(node_).data.size(); }

std::span<const Real> Tensor::data() const { return require(node_).data; }

std::span<Real> Tensor::mutable_data() { return require(node_).data; }

Real Tensor::item() const {
  const auto& n = require(node_);
  if (n.data.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(n.shape));
  }
  return n.data[0];
}

Real Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& n = require(node_);
  if (index.size() != n.shape.size()) {
    throw DimensionError("index rank does not match shape " + shape_str(n.shape));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= n.shape[axis]) throw DimensionError("index out of range for shape " + shape_str(n.shape));
    flat = flat * n.shape[axis] + i;
    ++axis;
  }
  return n.data[flat];
}

bool Tensor::requires_grad() const { return require(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  auto& n = require(node_);
  if (!n.is_leaf) throw ContractError("requires_grad can only be changed on leaf tensors");
  n.requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return require(node_).is_leaf; }

bool Tensor::has_grad() const { return !require(node_).grad.empty(); }

std::span<const Real> Tensor::grad() const { return require(node_).grad; }

Tensor Tensor::grad_tensor() const {
  const auto& n = require(node_);
  if (n.grad.empty()) return Tensor::zeros(n.shape);
  return Tensor::from(n.shape, n.grad);
}

void Tensor::zero_grad() { require(node_).grad.clear(); }

Tensor Tensor::clone() const {
  const auto& n = require(node_);
  return Tensor(new_leaf(n.shape, n.data, n.requires_grad));
}

Tensor Tensor::detach() const {
  const auto& n = require(node_);
  return Tensor(new_leaf(n.shape, n.data, false));
}

const std::string& Tensor::op_name() const { return require(node_).op; }

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

Tensor make_result(Shape shape, std::vector<Real> data, const std::vector<Tensor>& parents,
                   std::string op, detail::BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = ++tape_counter;
  node->op = std::move(op);
  node->is_leaf = false;
  bool needs = false;
  if (grad_mode) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  const auto& root = loss.node();
  if (!root) throw ContractError("backward() on an undefined tensor");
  if (root->data.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(root->shape));
  }
  if (!root->requires_grad) return;

  // Collect the reachable part of the tape, then replay it newest-first.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  std::vector<Real> one{Real(1)};
  root->accumulate(one);
  for (auto* n : order) {
    if (n->is_leaf) continue;
    if (!n->backward) {
      throw UnsupportedOpError("op '" + n->op + "' has no registered backward rule");
    }
    if (n->grad.empty()) continue;
    n->backward(n->grad);
  }
}

TIMEMAE_END_NAMESPACE
