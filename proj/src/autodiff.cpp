#include "chunkdec/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace chunkdec::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::add: return "add";
    case Op::add_bias: return "add_bias";
    case Op::scale: return "scale";
    case Op::relu: return "relu";
    case Op::masked_softmax: return "masked_softmax";
    case Op::layer_norm: return "layer_norm";
    case Op::causal_conv1d: return "causal_conv1d";
    case Op::concat_time: return "concat_time";
    case Op::tail_slice: return "tail_slice";
    case Op::slice_cols: return "slice_cols";
    case Op::concat_cols: return "concat_cols";
    case Op::sum: return "sum";
    case Op::mse: return "mse";
    case Op::count_: break;
  }
  return "unknown";
}

namespace {

using Grads = std::vector<Tensor>;
using Inputs = std::vector<const Tensor*>;

Grads matmul_rule(const TapeNode&, const Inputs& in, const Tensor& g) {
  return {chunkdec::matmul(g, chunkdec::transpose(*in[1])),
          chunkdec::matmul(chunkdec::transpose(*in[0]), g)};
}

Grads transpose_rule(const TapeNode&, const Inputs&, const Tensor& g) {
  return {chunkdec::transpose(g)};
}

Grads add_rule(const TapeNode&, const Inputs&, const Tensor& g) { return {g, g}; }

Grads add_bias_rule(const TapeNode&, const Inputs& in, const Tensor& g) {
  Tensor gb(in[1]->shape());
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
  return {g, std::move(gb)};
}

Grads scale_rule(const TapeNode& node, const Inputs&, const Tensor& g) {
  return {chunkdec::scale(g, node.scalar)};
}

Grads relu_rule(const TapeNode&, const Inputs& in, const Tensor& g) {
  // Subgradient at exactly 0 is 0.
  Tensor gx(g.shape());
  for (std::size_t i = 0; i < g.numel(); ++i) gx[i] = (*in[0])[i] > 0 ? g[i] : 0.0;
  return {std::move(gx)};
}

Grads softmax_rule(const TapeNode& node, const Inputs&, const Tensor& g) {
  const Tensor& p = node.value;
  Tensor gx(p.shape());
  for (std::size_t q = 0; q < p.rows(); ++q) {
    double dot = 0;
    for (std::size_t k = 0; k < p.cols(); ++k) dot += g.at(q, k) * p.at(q, k);
    for (std::size_t k = 0; k < p.cols(); ++k) {
      // Masked entries have p == 0 and must stay exactly zero.
      gx.at(q, k) = p.at(q, k) == 0.0 ? 0.0 : p.at(q, k) * (g.at(q, k) - dot);
    }
  }
  return {std::move(gx)};
}

Grads layer_norm_rule(const TapeNode& node, const Inputs& in, const Tensor& g) {
  const Tensor& x = *in[0];
  const Tensor& gamma = *in[1];
  const std::size_t d = x.cols();
  Tensor gx(x.shape()), ggamma(gamma.shape()), gbeta(in[2]->shape());
  std::vector<double> xhat(d), gxh(d);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto row = x.row(t);
    double mean = 0;
    for (auto v : row) mean += v;
    mean /= double(d);
    double var = 0;
    for (auto v : row) var += (v - mean) * (v - mean);
    var /= double(d);
    const double inv_std = 1.0 / std::sqrt(var + node.scalar);
    double sum_g = 0, sum_gx = 0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (row[j] - mean) * inv_std;
      gxh[j] = g.at(t, j) * gamma[j];
      ggamma[j] += g.at(t, j) * xhat[j];
      gbeta[j] += g.at(t, j);
      sum_g += gxh[j];
      sum_gx += gxh[j] * xhat[j];
    }
    for (std::size_t j = 0; j < d; ++j) {
      gx.at(t, j) = inv_std * (gxh[j] - sum_g / double(d) - xhat[j] * sum_gx / double(d));
    }
  }
  return {std::move(gx), std::move(ggamma), std::move(gbeta)};
}

Grads conv_rule(const TapeNode&, const Inputs& in, const Tensor& g) {
  const Tensor& x = *in[0];
  const Tensor& w = *in[1];
  const std::size_t k = w.dim(0), din = w.dim(1), dout = w.dim(2);
  Tensor gx(x.shape()), gw(w.shape()), gb(in[2]->shape());
  for (std::size_t t = 0; t < g.rows(); ++t) {
    const double* gt = g.data() + t * dout;
    for (std::size_t c = 0; c < dout; ++c) gb[c] += gt[c];
    for (std::size_t j = 0; j < k; ++j) {
      const double* xin = x.data() + (t + j) * din;
      double* gxin = gx.data() + (t + j) * din;
      const double* wj = w.data() + j * din * dout;
      double* gwj = gw.data() + j * din * dout;
      for (std::size_t i = 0; i < din; ++i) {
        const double* wrow = wj + i * dout;
        double* gwrow = gwj + i * dout;
        const double xv = xin[i];
        double acc = 0;
        for (std::size_t c = 0; c < dout; ++c) {
          acc += gt[c] * wrow[c];
          gwrow[c] += xv * gt[c];
        }
        gxin[i] += acc;
      }
    }
  }
  return {std::move(gx), std::move(gw), std::move(gb)};
}

Grads concat_time_rule(const TapeNode&, const Inputs& in, const Tensor& g) {
  const Tensor& a = *in[0];
  const Tensor& b = *in[1];
  const auto split = static_cast<std::ptrdiff_t>(a.numel());
  std::vector<double> ga(g.values().begin(), g.values().begin() + split);
  std::vector<double> gb(g.values().begin() + split, g.values().end());
  return {Tensor(a.shape(), std::move(ga)), Tensor(b.shape(), std::move(gb))};
}

Grads tail_slice_rule(const TapeNode&, const Inputs& in, const Tensor& g) {
  Tensor gx(in[0]->shape());
  std::copy(g.values().begin(), g.values().end(),
            gx.values().end() - static_cast<std::ptrdiff_t>(g.numel()));
  return {std::move(gx)};
}

Grads slice_cols_rule(const TapeNode& node, const Inputs& in, const Tensor& g) {
  Tensor gx(in[0]->shape());
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < node.b; ++c) gx.at(r, node.a + c) = g.at(r, c);
  return {std::move(gx)};
}

Grads concat_cols_rule(const TapeNode&, const Inputs& in, const Tensor& g) {
  Grads out;
  std::size_t offset = 0;
  for (const Tensor* p : in) {
    out.push_back(chunkdec::slice_cols(g, offset, p->cols()));
    offset += p->cols();
  }
  return out;
}

Grads sum_rule(const TapeNode&, const Inputs& in, const Tensor& g) {
  return {Tensor(in[0]->shape(), g[0])};
}

Grads mse_rule(const TapeNode&, const Inputs& in, const Tensor& g) {
  const Tensor& p = *in[0];
  const Tensor& t = *in[1];
  const double factor = 2.0 * g[0] / double(p.numel());
  Tensor gp(p.shape()), gt(t.shape());
  for (std::size_t i = 0; i < p.numel(); ++i) {
    gp[i] = factor * (p[i] - t[i]);
    gt[i] = -gp[i];
  }
  return {std::move(gp), std::move(gt)};
}

RuleTable make_default_rules() {
  RuleTable r;
  r[static_cast<std::size_t>(Op::leaf)] = [](const TapeNode&, const Inputs&, const Tensor&) {
    return Grads{};
  };
  r[static_cast<std::size_t>(Op::matmul)] = matmul_rule;
  r[static_cast<std::size_t>(Op::transpose)] = transpose_rule;
  r[static_cast<std::size_t>(Op::add)] = add_rule;
  r[static_cast<std::size_t>(Op::add_bias)] = add_bias_rule;
  r[static_cast<std::size_t>(Op::scale)] = scale_rule;
  r[static_cast<std::size_t>(Op::relu)] = relu_rule;
  r[static_cast<std::size_t>(Op::masked_softmax)] = softmax_rule;
  r[static_cast<std::size_t>(Op::layer_norm)] = layer_norm_rule;
  r[static_cast<std::size_t>(Op::causal_conv1d)] = conv_rule;
  r[static_cast<std::size_t>(Op::concat_time)] = concat_time_rule;
  r[static_cast<std::size_t>(Op::tail_slice)] = tail_slice_rule;
  r[static_cast<std::size_t>(Op::slice_cols)] = slice_cols_rule;
  r[static_cast<std::size_t>(Op::concat_cols)] = concat_cols_rule;
  r[static_cast<std::size_t>(Op::sum)] = sum_rule;
  r[static_cast<std::size_t>(Op::mse)] = mse_rule;
  return r;
}

}  // namespace

const RuleTable& default_rules() {
  static const RuleTable rules = make_default_rules();
  return rules;
}

void Tape::require_rule(Op op) const {
  if (!(*rules_)[static_cast<std::size_t>(op)]) {
    throw UnsupportedOp(std::string("no backward rule registered for op '") + op_name(op) +
                        "'");
  }
}

Var Tape::push(TapeNode node) {
  require_rule(node.op);
  for (auto id : node.inputs) {
    if (id >= nodes_.size()) throw std::out_of_range("tape input refers to a later node");
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  TapeNode n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(std::string name, Tensor value) {
  TapeNode n;
  n.value = std::move(value);
  n.name = std::move(name);
  n.is_param = true;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  require_rule(Op::matmul);
  TapeNode n{Op::matmul, {a.id, b.id}, chunkdec::matmul(value(a), value(b))};
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  require_rule(Op::transpose);
  return push({Op::transpose, {a.id}, chunkdec::transpose(value(a))});
}

Var Tape::add(Var a, Var b) {
  require_rule(Op::add);
  return push({Op::add, {a.id, b.id}, chunkdec::add(value(a), value(b))});
}

Var Tape::add_bias(Var x, Var bias) {
  require_rule(Op::add_bias);
  return push({Op::add_bias, {x.id, bias.id}, chunkdec::add_bias(value(x), value(bias))});
}

Var Tape::scale(Var x, double s) {
  require_rule(Op::scale);
  TapeNode n{Op::scale, {x.id}, chunkdec::scale(value(x), s)};
  n.scalar = s;
  return push(std::move(n));
}

Var Tape::relu(Var x) {
  require_rule(Op::relu);
  return push({Op::relu, {x.id}, chunkdec::relu(value(x))});
}

Var Tape::masked_softmax(Var logits, const BoolMatrix* mask) {
  require_rule(Op::masked_softmax);
  TapeNode n{Op::masked_softmax, {logits.id}, chunkdec::masked_softmax(value(logits), mask)};
  if (mask) {
    n.mask = *mask;
    n.has_mask = true;
  }
  return push(std::move(n));
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_rule(Op::layer_norm);
  TapeNode n{Op::layer_norm,
             {x.id, gamma.id, beta.id},
             chunkdec::layer_norm(value(x), value(gamma), value(beta), eps)};
  n.scalar = eps;
  return push(std::move(n));
}

Var Tape::causal_conv1d(Var x, Var w, Var b) {
  require_rule(Op::causal_conv1d);
  return push({Op::causal_conv1d,
               {x.id, w.id, b.id},
               chunkdec::causal_conv1d(value(x), value(w), value(b))});
}

Var Tape::concat_time(Var a, Var b) {
  require_rule(Op::concat_time);
  return push({Op::concat_time, {a.id, b.id}, chunkdec::concat_time(value(a), value(b))});
}

Var Tape::tail_slice(Var x, std::size_t s) {
  require_rule(Op::tail_slice);
  TapeNode n{Op::tail_slice, {x.id}, chunkdec::tail_slice(value(x), s)};
  n.a = s;
  return push(std::move(n));
}

Var Tape::slice_cols(Var x, std::size_t begin, std::size_t count) {
  require_rule(Op::slice_cols);
  TapeNode n{Op::slice_cols, {x.id}, chunkdec::slice_cols(value(x), begin, count)};
  n.a = begin;
  n.b = count;
  return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  require_rule(Op::concat_cols);
  std::vector<Tensor> values;
  std::vector<std::size_t> ids;
  for (auto p : parts) {
    values.push_back(value(p));
    ids.push_back(p.id);
  }
  return push({Op::concat_cols, std::move(ids),
               chunkdec::concat_cols(std::span<const Tensor>(values))});
}

Var Tape::sum(Var x) {
  require_rule(Op::sum);
  double s = 0;
  for (auto v : value(x).values()) s += v;
  return push({Op::sum, {x.id}, Tensor(Shape{}, std::vector<double>{s})});
}

Var Tape::mse(Var pred, Var target) {
  require_rule(Op::mse);
  const Tensor& p = value(pred);
  const Tensor& t = value(target);
  if (p.shape() != t.shape()) {
    throw DimensionError("mse: shape mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(t.shape()));
  }
  double s = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  s /= double(std::max<std::size_t>(1, p.numel()));
  return push({Op::mse, {pred.id, target.id}, Tensor(Shape{}, std::vector<double>{s})});
}

Gradients Tape::backward(Var output, const Tensor& seed) const {
  if (output.id >= nodes_.size()) throw std::out_of_range("backward: unknown output node");
  if (seed.shape() != value(output).shape()) {
    throw DimensionError("backward: seed " + shape_str(seed.shape()) + " vs output " +
                         shape_str(value(output).shape()));
  }
  std::vector<Tensor> grads(output.id + 1);
  std::vector<bool> has(output.id + 1, false);
  grads[output.id] = seed;
  has[output.id] = true;

  for (std::size_t id = output.id + 1; id-- > 0;) {
    if (!has[id]) continue;
    const TapeNode& n = nodes_[id];
    if (n.op == Op::leaf) continue;
    Inputs in;
    for (auto i : n.inputs) in.push_back(&nodes_[i].value);
    Grads gin = (*rules_)[static_cast<std::size_t>(n.op)](n, in, grads[id]);
    if (gin.size() != n.inputs.size()) {
      throw std::logic_error(std::string("backward rule for '") + op_name(n.op) +
                             "' at node " + std::to_string(id) + " returned " +
                             std::to_string(gin.size()) + " gradients");
    }
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      const auto src = n.inputs[j];
      if (gin[j].shape() != nodes_[src].value.shape()) {
        throw DimensionError(std::string("backward: '") + op_name(n.op) + "' node " +
                             std::to_string(id) + " produced gradient " +
                             shape_str(gin[j].shape()) + " for input " +
                             shape_str(nodes_[src].value.shape()));
      }
      if (!has[src]) {
        grads[src] = std::move(gin[j]);
        has[src] = true;
      } else {
        auto& acc = grads[src];
        for (std::size_t e = 0; e < acc.numel(); ++e) acc[e] += gin[j][e];
      }
    }
  }

  Gradients out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const TapeNode& n = nodes_[id];
    if (!n.is_param) continue;
    Tensor g = (id < has.size() && has[id]) ? grads[id] : Tensor(n.value.shape());
    auto [it, inserted] = out.emplace(n.name, std::move(g));
    if (!inserted) {
      for (std::size_t e = 0; e < it->second.numel(); ++e) it->second[e] += g[e];
    }
  }
  return out;
}

Recording forward_record(const Program& program, const TensorMap& inputs,
                         const TensorMap& params, const RuleTable& rules) {
  Recording rec{Tape(rules), Var{}, {}, {}};
  for (const auto& [name, value] : inputs) rec.inputs[name] = rec.tape.constant(value);
  for (const auto& [name, value] : params) rec.params[name] = rec.tape.parameter(name, value);
  rec.output = program(rec.tape, rec.inputs, rec.params);
  return rec;
}

Gradients backward(const Recording& rec, const Tensor& seed) {
  return rec.tape.backward(rec.output, seed);
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

const ParamCheck* FiniteDiffReport::worst() const {
  const ParamCheck* w = nullptr;
  for (const auto& p : params)
    if (!w || p.max_rel_error > w->max_rel_error) w = &p;
  return w;
}

FiniteDiffReport finite_diff_check(const Program& program, const TensorMap& inputs,
                                   const TensorMap& params, double h, double tol,
                                   const RuleTable& rules, std::uint64_t seed) {
  auto rec = forward_record(program, inputs, params, rules);
  const Tensor& out = rec.tape.value(rec.output);
  Tensor projection(out.shape());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& v : projection.values()) v = dist(rng);
  const Gradients analytic = backward(rec, projection);

  auto loss_at = [&](const TensorMap& p) {
    auto r = forward_record(program, inputs, p, rules);
    const Tensor& o = r.tape.value(r.output);
    double s = 0;
    for (std::size_t i = 0; i < o.numel(); ++i) s += projection[i] * o[i];
    return s;
  };

  FiniteDiffReport report;
  report.h = h;
  report.tol = tol;
  TensorMap perturbed = params;
  for (const auto& [name, value] : params) {
    ParamCheck check;
    check.name = name;
    const Tensor& ga = analytic.at(name);
    for (std::size_t i = 0; i < value.numel(); ++i) {
      Tensor& p = perturbed.at(name);
      const double orig = p[i];
      p[i] = orig + h;
      const double up = loss_at(perturbed);
      p[i] = orig - h;
      const double down = loss_at(perturbed);
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(ga[i], numeric);
      if (err > check.max_rel_error || i == 0) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic = ga[i];
        check.numeric = numeric;
      }
    }
    check.passed = check.max_rel_error <= tol;
    report.passed = report.passed && check.passed;
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace chunkdec::ad
