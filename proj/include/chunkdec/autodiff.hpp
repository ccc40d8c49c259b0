#pragma once

// Tape-based reverse-mode differentiation over the tensor-core op set (f64).

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "chunkdec/tensor.hpp"

namespace chunkdec::ad {

using Tensor = chunkdec::Tensor<double>;
using TensorMap = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

enum class Op : std::uint8_t {
  leaf,
  matmul,
  transpose,
  add,
  add_bias,
  scale,
  relu,
  masked_softmax,
  layer_norm,
  causal_conv1d,
  concat_time,
  tail_slice,
  slice_cols,
  concat_cols,
  sum,
  mse,
  count_
};

const char* op_name(Op op);

class UnsupportedOp : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Var {
  static constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::size_t id = none;
};

struct TapeNode {
  Op op = Op::leaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  // Op attributes: scale factor / eps, slice bounds, attention mask.
  double scalar = 0.0;
  std::size_t a = 0;
  std::size_t b = 0;
  BoolMatrix mask;
  bool has_mask = false;
  // Leaves only.
  std::string name;
  bool is_param = false;
};

// Given the node and dL/d(output), returns dL/d(input) for each input in order.
using BackwardRule = std::function<std::vector<Tensor>(
    const TapeNode& node, const std::vector<const Tensor*>& inputs, const Tensor& grad)>;

using RuleTable = std::array<BackwardRule, static_cast<std::size_t>(Op::count_)>;

const RuleTable& default_rules();

class Tape {
 public:
  explicit Tape(const RuleTable& rules = default_rules()) : rules_(&rules) {}

  Var constant(Tensor value);
  Var parameter(std::string name, Tensor value);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var add_bias(Var x, Var bias);
  Var scale(Var x, double s);
  Var relu(Var x);
  Var masked_softmax(Var logits, const BoolMatrix* mask);
  Var layer_norm(Var x, Var gamma, Var beta, double eps);
  Var causal_conv1d(Var x, Var w, Var b);
  Var concat_time(Var a, Var b);
  Var tail_slice(Var x, std::size_t s);
  Var slice_cols(Var x, std::size_t begin, std::size_t count);
  Var concat_cols(const std::vector<Var>& parts);
  Var sum(Var x);
  Var mse(Var pred, Var target);

  // Zero-valued constant, used for causal left padding.
  Var zeros(std::size_t rows, std::size_t cols) { return constant(Tensor({rows, cols})); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const TapeNode& node(Var v) const { return nodes_.at(v.id); }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of sum(seed * output) with respect to every parameter leaf.
  Gradients backward(Var output, const Tensor& seed) const;

 private:
  Var push(TapeNode node);
  void require_rule(Op op) const;

  const RuleTable* rules_;
  std::vector<TapeNode> nodes_;
};

using VarMap = std::map<std::string, Var>;
using Program = std::function<Var(Tape& tape, const VarMap& inputs, const VarMap& params)>;

struct Recording {
  Tape tape;
  Var output;
  VarMap inputs;
  VarMap params;
};

Recording forward_record(const Program& program, const TensorMap& inputs,
                         const TensorMap& params, const RuleTable& rules = default_rules());

Gradients backward(const Recording& rec, const Tensor& seed);

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = true;
};

struct FiniteDiffReport {
  double h = 0.0;
  double tol = 0.0;
  std::vector<ParamCheck> params;
  bool passed = true;

  const ParamCheck* worst() const;
};

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

// Checks the gradient of L = sum(r * output), r a fixed pseudo-random
// projection, against central differences for every parameter element.
FiniteDiffReport finite_diff_check(const Program& program, const TensorMap& inputs,
                                   const TensorMap& params, double h, double tol,
                                   const RuleTable& rules = default_rules(),
                                   std::uint64_t seed = 7);

}  // namespace chunkdec::ad
