#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "timemae/errors.hpp"
#include "timemae/precision.hpp"

TIMEMAE_BEGIN_NAMESPACE

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

using BackwardFn = std::function<void(std::span<const Real> grad_out)>;

struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t seq = 0;  // position on the thread's tape
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  void accumulate(std::span<const Real> g);
  std::vector<Real>& grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode autodiff.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node,
/// clone() makes an independent leaf. Op results record their parents and a
/// backward rule; the per-thread sequence counter orders them on the tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> data, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of one axis; negative axes count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const Real> data() const;
  /// Writable storage. Only meant for leaves (parameters, fixtures); writing
  /// into an op result does not invalidate anything recorded on the tape.
  std::span<Real> mutable_data();
  Real item() const;
  Real at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  /// Gradient storage; empty span when no gradient has been accumulated.
  std::span<const Real> grad() const;
  /// Gradient as a detached tensor (zeros when absent).
  Tensor grad_tensor() const;
  void zero_grad();

  /// New leaf sharing no storage and no history.
  Tensor clone() const;
  /// New leaf with a copy of the values and requires_grad = false.
  Tensor detach() const;

  const std::string& op_name() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// True while gradient recording is enabled on this thread.
bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. When recording is on and any parent requires grad the
/// result joins the tape with `backward`; a null `backward` in that case makes
/// backward() fail with UnsupportedOpError.
Tensor make_result(Shape shape, std::vector<Real> data, const std::vector<Tensor>& parents,
                   std::string op, detail::BackwardFn backward);

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls until zero_grad().
void backward(const Tensor& loss);

/// Names of every op that has a registered backward rule.
const std::vector<std::string>& op_catalog();

TIMEMAE_END_NAMESPACE
