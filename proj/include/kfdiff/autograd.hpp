#pragma once

// Minimal reverse-mode differentiation over 2-D matrices. A Tape records
// every op of one forward pass; backward() walks it in reverse. Parameters
// live outside the tape and receive accumulated gradients directly, so a
// mini-batch is simply several forward/backward passes before one optimizer
// step.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kfdiff/matrix.hpp"

namespace kfdiff::ag {

template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Parameter(std::string n, Matrix<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad.fill(T(0)); }
};

// Ordered, name-addressable parameter collection. Order is creation order and
// defines the checkpoint layout.
template <class T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) { *this = other; }
  ParameterSet& operator=(const ParameterSet& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) add(p->name, p->value);
    return *this;
  }
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter<T>& add(const std::string& name, Matrix<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter<T>>(name, std::move(value)));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }
  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }
  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var self)>;

  // When recording is off ops still compute values but store no closures.
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var constant(Matrix<T> value);
  Var input(Matrix<T> value);  // leaf that receives a gradient
  Var param(Parameter<T>& p);

  const Matrix<T>& value(Var v) const;
  Matrix<T>& grad(Var v);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Creates an op output. `parents` decide whether gradients are needed.
  Var push(Matrix<T> value, std::initializer_list<Var> parents, BackwardFn fn);
  Var push(Matrix<T> value, std::span<const Var> parents, BackwardFn fn);

  // Seeds d(loss)/d(output) and propagates to all leaves and parameters.
  void backward(Var output, const Matrix<T>& seed);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::map<const Parameter<T>*, int> param_nodes_;
  bool recording_;
};

// ---- ops -------------------------------------------------------------------

// x[n x in] * W[in x out] + b[1 x out]; pass an invalid Var to omit the bias.
template <class T>
Var linear(Tape<T>& tape, Var x, Var w, Var b);
template <class T>
Var matmul(Tape<T>& tape, Var a, Var b);
template <class T>
Var add(Tape<T>& tape, Var a, Var b);
// a[n x c] + row[1 x c] broadcast over rows
template <class T>
Var add_row(Tape<T>& tape, Var a, Var row);
// a + constant matrix (no gradient to the constant)
template <class T>
Var add_const(Tape<T>& tape, Var a, const Matrix<T>& c);
template <class T>
Var scale(Tape<T>& tape, Var a, T factor);
template <class T>
Var concat_cols(Tape<T>& tape, Var a, Var b);
template <class T>
Var concat_rows(Tape<T>& tape, std::span<const Var> parts);
template <class T>
Var slice_rows(Tape<T>& tape, Var a, std::size_t begin, std::size_t count);
template <class T>
Var broadcast_rows(Tape<T>& tape, Var row, std::size_t n);
// out_i = use_a[i] ? a_i : fallback (1 x c)
template <class T>
Var select_rows(Tape<T>& tape, Var a, Var fallback, std::span<const char> use_a);
template <class T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps = T(1e-5));
template <class T>
Var gelu(Tape<T>& tape, Var x);
template <class T>
Var silu(Tape<T>& tape, Var x);
// mean over the given rows of a token table -> 1 x c
template <class T>
Var embedding_mean(Tape<T>& tape, Var table, std::span<const int> ids);

// Multi-head scaled dot-product attention with an additive key mask
// (0 for valid keys, -1e9 otherwise). Queries with query_active[i] == 0 produce
// a zero row. Empty spans mean "all valid" / "all active".
template <class T>
Var attention(Tape<T>& tape, Var q, Var k, Var v, int heads, std::span<const char> key_valid,
              std::span<const char> query_active = {});

// Attaches an externally computed loss: returns a 1x1 node holding `value`
// whose gradient w.r.t. `pred` is `grad` (scaled by the incoming seed).
template <class T>
Var external_loss(Tape<T>& tape, Var pred, T value, Matrix<T> grad);

}  // namespace kfdiff::ag
