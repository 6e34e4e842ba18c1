#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mscn/tensor/tensor.hpp"

namespace mscn {

/// Trainable tensor plus its gradient. `decay_exempt` marks biases and
/// batch-norm affine terms, which skip weight decay and LARS trust scaling.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay_exempt = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool exempt = false)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), decay_exempt(exempt) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

/// Ordered, name-addressable collection of parameters.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value, bool decay_exempt = false) {
    require<ConfigError>(!index_.contains(name), "duplicate parameter name ", name);
    index_.emplace(name, params_.size());
    params_.emplace_back(std::move(name), std::move(value), decay_exempt);
    return params_.back();
  }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    require<ConfigError>(it != index_.end(), "unknown parameter ", name);
    return params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    require<ConfigError>(it != index_.end(), "unknown parameter ", name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Handle to a value recorded on a tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

/// Reverse-mode autodiff tape. Entries are appended in execution order, so the
/// tape is topologically sorted by construction; backward walks it in reverse.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}, "constant"); }

  Var variable(Tensor<T> value) {
    return push(std::move(value), grad_enabled_, nullptr, {}, "variable");
  }

  /// Binds a parameter; its gradient is written back by backward().
  Var parameter(Parameter<T>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return it->second;
    Var v = push(p.value, grad_enabled_, nullptr, {}, "parameter");
    entries_[v.id].param = &p;
    bound_.emplace(&p, v);
    return v;
  }

  /// Records an op output. `backward` is kept only when some input needs a gradient.
  Var record(std::string_view op, Tensor<T> out, const std::vector<Var>& inputs,
             BackwardFn backward) {
    if (check_finite_ && !out.all_finite())
      throw NumericError(detail::concat("non-finite value produced by ", op));
    bool needs = false;
    if (grad_enabled_)
      for (Var in : inputs) needs = needs || entries_.at(in.id).requires_grad;
    return push(std::move(out), needs, needs ? std::move(backward) : nullptr, {}, op);
  }

  const Tensor<T>& value(Var v) const { return entries_.at(v.id).value; }
  bool requires_grad(Var v) const { return entries_.at(v.id).requires_grad; }
  std::string_view op_name(Var v) const { return entries_.at(v.id).op; }
  std::size_t size() const { return entries_.size(); }

  /// Gradient buffer for `v`, zero-initialized on first access. Ops accumulate into it.
  Tensor<T>& grad_buffer(Var v) {
    auto& e = entries_.at(v.id);
    if (e.grad.empty() && !e.value.empty()) e.grad = Tensor<T>(e.value.shape());
    return e.grad;
  }

  /// Gradient after backward(); zeros when `v` was not reached.
  Tensor<T> grad(Var v) const {
    const auto& e = entries_.at(v.id);
    return e.grad.empty() ? Tensor<T>(e.value.shape()) : e.grad;
  }

  void backward(Var loss) {
    require(grad_enabled_, "backward() on a tape recorded without gradients");
    require(value(loss).numel() == 1, "backward() needs a scalar loss, got shape ",
            shape_str(value(loss).shape()));
    grad_buffer(loss).fill(T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& e = entries_[i];
      if (!e.backward || e.grad.empty()) continue;
      e.backward(*this, e.grad);
      if (check_finite_ && !e.grad.all_finite())
        throw NumericError(detail::concat("non-finite gradient flowing into ", e.op));
    }
    for (auto& e : entries_) {
      if (e.param == nullptr) continue;
      e.param->grad = e.grad.empty() ? Tensor<T>(e.value.shape()) : e.grad;
      if (check_finite_ && !e.param->grad.all_finite())
        throw NumericError("non-finite gradient for parameter " + e.param->name);
    }
  }

  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
    std::string_view op;
  };

  Var push(Tensor<T> value, bool requires_grad, BackwardFn fn, Tensor<T> grad,
           std::string_view op) {
    entries_.push_back(
        Entry{std::move(value), std::move(grad), requires_grad, nullptr, std::move(fn), op});
    return Var{entries_.size() - 1};
  }

  std::vector<Entry> entries_;
  std::unordered_map<const Parameter<T>*, Var> bound_;
  bool grad_enabled_;
  bool check_finite_ = true;
};

}  // namespace mscn
