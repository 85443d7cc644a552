// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dpcrn/layers.hpp"
#include "dpcrn/tensor.hpp"

namespace dpcrn {

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

// Reverse-mode tape. Nodes are appended in execution order; each op node
// keeps a forward closure (for replay) and a backward closure that
// accumulates into the gradients of its inputs.
template <typename T>
class GradTape {
 public:
  using Inputs = std::vector<const Tensor<T>*>;
  using ForwardFn = std::function<Tensor<T>(const Inputs&)>;
  // din[k] is null when input k does not need a gradient.
  using BackwardFn =
      std::function<void(const Inputs& in, const Tensor<T>& out,
                         const Tensor<T>& dout, const std::vector<Tensor<T>*>& din)>;

  int leaf(std::string name, std::shared_ptr<const Tensor<T>> value,
           bool requires_grad) {
    Node n;
    n.op = "leaf";
    n.name = std::move(name);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int record(std::string op, std::vector<int> inputs,
             std::shared_ptr<const Tensor<T>> value, ForwardFn fwd,
             BackwardFn bwd) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.fwd = std::move(fwd);
    n.bwd = std::move(bwd);
    for (int i : inputs) {
      check(i >= 0 && i < static_cast<int>(nodes_.size()),
            "tape input refers to an unknown node");
      n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    }
    n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Marks the node whose gradient backward() is seeded with.
  void mark_output(int id) {
    check(id >= 0 && id < static_cast<int>(nodes_.size()), "bad output node");
    output_ = id;
  }
  int output() const { return output_; }
  bool complete() const { return output_ >= 0; }

  std::size_t size() const { return nodes_.size(); }
  const std::string& op(int id) const { return nodes_.at(id).op; }
  const Tensor<T>& value(int id) const { return *nodes_.at(id).value; }

  // Recomputes every op node from its recorded inputs; true when all values
  // come out bit-identical.
  bool replay() const {
    std::vector<std::shared_ptr<const Tensor<T>>> vals(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (!n.fwd) {
        vals[i] = n.value;
        continue;
      }
      Inputs in;
      for (int k : n.inputs) in.push_back(vals[k].get());
      auto v = std::make_shared<const Tensor<T>>(n.fwd(in));
      if (!(*v == *n.value)) return false;
      vals[i] = std::move(v);
    }
    return true;
  }

  // Seeds d(loss)/d(output) and returns d(loss)/d(leaf) for every named
  // leaf that requires a gradient.
  GradMap<T> backward(const Tensor<T>& seed) const {
    if (!complete()) fail("incomplete tape: no recorded output");
    const Tensor<T>& out = *nodes_[output_].value;
    check(seed.shape() == out.shape(),
          "loss gradient shape " + shape_str(seed.shape()) +
              " does not match output " + shape_str(out.shape()));
    std::vector<Tensor<T>> grads(nodes_.size());
    std::vector<bool> has(nodes_.size(), false);
    grads[output_] = seed;
    has[output_] = true;
    for (int i = output_; i >= 0; --i) {
      const Node& n = nodes_[i];
      if (!has[i] || !n.bwd || !n.requires_grad) continue;
      Inputs in;
      std::vector<Tensor<T>*> din;
      for (int k : n.inputs) {
        in.push_back(nodes_[k].value.get());
        if (nodes_[k].requires_grad) {
          if (!has[k]) {
            grads[k] = Tensor<T>(nodes_[k].value->shape());
            has[k] = true;
          }
          din.push_back(&grads[k]);
        } else {
          din.push_back(nullptr);
        }
      }
      n.bwd(in, *n.value, grads[i], din);
    }
    GradMap<T> out_grads;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.op != "leaf" || !n.requires_grad || n.name.empty()) continue;
      out_grads[n.name] = has[i] ? std::move(grads[i])
                                 : Tensor<T>(n.value->shape());
    }
    return out_grads;
  }

 private:
  struct Node {
    std::string op;
    std::string name;
    std::vector<int> inputs;
    std::shared_ptr<const Tensor<T>> value;
    ForwardFn fwd;
    BackwardFn bwd;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  int output_ = -1;
};

template <typename T>
GradMap<T> backward(const GradTape<T>& tape, const Tensor<T>& loss_grad) {
  return tape.backward(loss_grad);
}

// A value flowing through a forward pass; `node` is its tape id when taping.
template <typename T>
struct Var {
  std::shared_ptr<const Tensor<T>> value;
  int node = -1;

  const Tensor<T>& operator*() const { return *value; }
  const Tensor<T>* operator->() const { return value.get(); }
};

// Executes ops eagerly and, when a tape is attached, records them.
template <typename T>
class Graph {
 public:
  using Inputs = typename GradTape<T>::Inputs;
  using ForwardFn = typename GradTape<T>::ForwardFn;
  using BackwardFn = typename GradTape<T>::BackwardFn;

  explicit Graph(GradTape<T>* tape = nullptr) : tape_(tape) {}

  GradTape<T>* tape() const { return tape_; }

  Var<T> param(const std::string& name, const Tensor<T>& value,
               bool requires_grad = true) {
    // Parameters are aliased, not copied, when no tape is attached.
    auto ptr = std::shared_ptr<const Tensor<T>>(std::shared_ptr<void>(), &value);
    if (!tape_) return {ptr, -1};
    auto owned = std::make_shared<const Tensor<T>>(value);
    return {owned, tape_->leaf(name, owned, requires_grad)};
  }

  Var<T> input(Tensor<T> value, const std::string& name = "input",
               bool requires_grad = false) {
    auto owned = std::make_shared<const Tensor<T>>(std::move(value));
    if (!tape_) return {owned, -1};
    return {owned, tape_->leaf(name, owned, requires_grad)};
  }

  Var<T> apply(std::string op, std::vector<Var<T>> in, ForwardFn fwd,
               BackwardFn bwd) {
    Inputs ptrs;
    for (const auto& v : in) ptrs.push_back(v.value.get());
    auto out = std::make_shared<const Tensor<T>>(fwd(ptrs));
    debug_check_finite(*out, op.c_str());
    if (!tape_) return {out, -1};
    std::vector<int> ids;
    for (const auto& v : in) {
      check(v.node >= 0, "untaped value fed into taped op " + op);
      ids.push_back(v.node);
    }
    int id = tape_->record(std::move(op), std::move(ids), out, std::move(fwd),
                           std::move(bwd));
    return {out, id};
  }

  // --- ops -----------------------------------------------------------------

  Var<T> conv(const Var<T>& x, const Var<T>& w, const Var<T>& b, ConvGeom g) {
    return apply(
        "conv2d_causal", {x, w, b},
        [g](const Inputs& in) { return conv2d_causal(*in[0], *in[1], *in[2], g); },
        [g](const Inputs& in, const Tensor<T>&, const Tensor<T>& dy,
            const std::vector<Tensor<T>*>& din) {
          auto r = conv2d_causal_backward(*in[0], *in[1], g, dy);
          accumulate(din[0], r.dx);
          accumulate(din[1], r.dw);
          accumulate(din[2], r.db);
        });
  }

  Var<T> deconv(const Var<T>& x, const Var<T>& w, const Var<T>& b, ConvGeom g,
                std::size_t f_out) {
    return apply(
        "conv2d_transpose_causal", {x, w, b},
        [g, f_out](const Inputs& in) {
          return conv2d_transpose_causal(*in[0], *in[1], *in[2], g, f_out);
        },
        [g](const Inputs& in, const Tensor<T>&, const Tensor<T>& dy,
            const std::vector<Tensor<T>*>& din) {
          auto r = conv2d_transpose_causal_backward(*in[0], *in[1], g, dy);
          accumulate(din[0], r.dx);
          accumulate(din[1], r.dw);
          accumulate(din[2], r.db);
        });
  }

  // gamma, beta, running mean, running var.
  Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                    const Var<T>& mean, const Var<T>& var, BnMode mode,
                    BnStats* stats = nullptr) {
    if (stats && mode == BnMode::kTrain) *stats = bn_batch_stats(*x);
    return apply(
        mode == BnMode::kTrain ? "batch_norm_train" : "batch_norm_infer",
        {x, gamma, beta, mean, var},
        [mode](const Inputs& in) {
          return dpcrn::batch_norm(*in[0],
                                   BnParams<T>{*in[1], *in[2], *in[3], *in[4]},
                                   mode);
        },
        [mode](const Inputs& in, const Tensor<T>&, const Tensor<T>& dy,
               const std::vector<Tensor<T>*>& din) {
          auto r = batch_norm_backward(
              *in[0], BnParams<T>{*in[1], *in[2], *in[3], *in[4]}, mode, dy);
          accumulate(din[0], r.dx);
          accumulate(din[1], r.dgamma);
          accumulate(din[2], r.dbeta);
        });
  }

  Var<T> prelu(const Var<T>& x, const Var<T>& alpha) {
    return apply(
        "prelu", {x, alpha},
        [](const Inputs& in) { return dpcrn::prelu(*in[0], *in[1]); },
        [](const Inputs& in, const Tensor<T>&, const Tensor<T>& dy,
           const std::vector<Tensor<T>*>& din) {
          auto r = prelu_backward(*in[0], *in[1], dy);
          accumulate(din[0], r.dx);
          accumulate(din[1], r.dalpha);
        });
  }

  Var<T> fc(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    return apply(
        "fully_connected", {x, w, b},
        [](const Inputs& in) { return fully_connected(*in[0], *in[1], *in[2]); },
        [](const Inputs& in, const Tensor<T>&, const Tensor<T>& dy,
           const std::vector<Tensor<T>*>& din) {
          auto r = fully_connected_backward(*in[0], *in[1], dy);
          accumulate(din[0], r.dx);
          accumulate(din[1], r.dw);
          accumulate(din[2], r.db);
        });
  }

  Var<T> iln(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
    return apply(
        "iln", {x, gamma, beta},
        [](const Inputs& in) { return dpcrn::iln(*in[0], *in[1], *in[2]); },
        [](const Inputs& in, const Tensor<T>&, const Tensor<T>& dy,
           const std::vector<Tensor<T>*>& din) {
          auto r = iln_backward(*in[0], *in[1], dy);
          accumulate(din[0], r.dx);
          accumulate(din[1], r.dgamma);
          accumulate(din[2], r.dbeta);
        });
  }

  // [T, F, C] -> [T, F, 2H]: bidirectional LSTM across frequency, per frame.
  Var<T> intra_bilstm(const Var<T>& x, const Var<T>& fw_ih, const Var<T>& fw_hh,
                      const Var<T>& fb, const Var<T>& bw_ih,
                      const Var<T>& bw_hh, const Var<T>& bb) {
    return apply(
        "intra_bilstm", {x, fw_ih, fw_hh, fb, bw_ih, bw_hh, bb},
        [](const Inputs& in) {
          return intra_bilstm_forward(*in[0],
                                      LstmWeights<T>{*in[1], *in[2], *in[3]},
                                      LstmWeights<T>{*in[4], *in[5], *in[6]});
        },
        [](const Inputs& in, const Tensor<T>&, const Tensor<T>& dy,
           const std::vector<Tensor<T>*>& din) {
          const Tensor<T>& xv = *in[0];
          const std::size_t t = xv.dim(0), f = xv.dim(1), c = xv.dim(2);
          LstmWeights<T> fw{*in[1], *in[2], *in[3]};
          LstmWeights<T> bw{*in[4], *in[5], *in[6]};
          const std::size_t h = fw.hidden();
          LstmGrads<T> gf(fw), gb(bw);
          Tensor<T> dx(xv.shape());
          for (std::size_t i = 0; i < t; ++i) {
            lstm_sequence_backward(fw, xv.row(i), c, f, false, dy.row(i), 2 * h,
                                   dx.row(i), c, gf);
            lstm_sequence_backward(bw, xv.row(i), c, f, true, dy.row(i) + h,
                                   2 * h, dx.row(i), c, gb);
          }
          accumulate(din[0], dx);
          accumulate(din[1], gf.dw_ih);
          accumulate(din[2], gf.dw_hh);
          accumulate(din[3], gf.dbias);
          accumulate(din[4], gb.dw_ih);
          accumulate(din[5], gb.dw_hh);
          accumulate(din[6], gb.dbias);
        });
  }

  // [T, F, C] -> [T, F, H]: unidirectional LSTM across time, one per bin.
  Var<T> inter_lstm(const Var<T>& x, const Var<T>& w_ih, const Var<T>& w_hh,
                    const Var<T>& b) {
    return apply(
        "inter_lstm", {x, w_ih, w_hh, b},
        [](const Inputs& in) {
          return inter_lstm_forward(*in[0],
                                    LstmWeights<T>{*in[1], *in[2], *in[3]});
        },
        [](const Inputs& in, const Tensor<T>&, const Tensor<T>& dy,
           const std::vector<Tensor<T>*>& din) {
          const Tensor<T>& xv = *in[0];
          const std::size_t t = xv.dim(0), f = xv.dim(1), c = xv.dim(2);
          LstmWeights<T> w{*in[1], *in[2], *in[3]};
          const std::size_t h = w.hidden();
          LstmGrads<T> g(w);
          Tensor<T> dx(xv.shape());
          for (std::size_t j = 0; j < f; ++j)
            lstm_sequence_backward(w, xv.data() + j * c, f * c, t, false,
                                   dy.data() + j * h, f * h, dx.data() + j * c,
                                   f * c, g);
          accumulate(din[0], dx);
          accumulate(din[1], g.dw_ih);
          accumulate(din[2], g.dw_hh);
          accumulate(din[3], g.dbias);
        });
  }

  Var<T> add(const Var<T>& a, const Var<T>& b) {
    return apply(
        "add", {a, b},
        [](const Inputs& in) {
          Tensor<T> y = *in[0];
          y += *in[1];
          return y;
        },
        [](const Inputs&, const Tensor<T>&, const Tensor<T>& dy,
           const std::vector<Tensor<T>*>& din) {
          accumulate(din[0], dy);
          accumulate(din[1], dy);
        });
  }

  // Channel concatenation of two [T, F, *] maps: [a | b].
  Var<T> concat(const Var<T>& a, const Var<T>& b) {
    return apply(
        "concat", {a, b},
        [](const Inputs& in) { return concat_channels(*in[0], *in[1]); },
        [](const Inputs& in, const Tensor<T>&, const Tensor<T>& dy,
           const std::vector<Tensor<T>*>& din) {
          const std::size_t ca = in[0]->dim(2), cb = in[1]->dim(2);
          const std::size_t rows = in[0]->size() / ca;
          for (std::size_t r = 0; r < rows; ++r) {
            const T* d = dy.data() + r * (ca + cb);
            if (din[0])
              for (std::size_t k = 0; k < ca; ++k) (*din[0])[r * ca + k] += d[k];
            if (din[1])
              for (std::size_t k = 0; k < cb; ++k)
                (*din[1])[r * cb + k] += d[ca + k];
          }
        });
  }

  // --- shared forward helpers ------------------------------------------------

  static Tensor<T> intra_bilstm_forward(const Tensor<T>& x,
                                        const LstmWeights<T>& fw,
                                        const LstmWeights<T>& bw) {
    auto pf = PackedLstm<T>::from(fw);
    auto pb = PackedLstm<T>::from(bw);
    check(x.rank() == 3 && x.dim(2) == pf.d_in, "intra rnn input width mismatch");
    auto y = Tensor<T>::tfc(x.dim(0), x.dim(1), 2 * pf.hidden);
    std::vector<T> scratch;
    for (std::size_t t = 0; t < x.dim(0); ++t)
      bilstm_frame(pf, pb, x.row(t), x.dim(1), y.row(t), scratch);
    return y;
  }

  static Tensor<T> inter_lstm_forward(const Tensor<T>& x,
                                      const LstmWeights<T>& w) {
    auto p = PackedLstm<T>::from(w);
    check(x.rank() == 3 && x.dim(2) == p.d_in, "inter rnn input width mismatch");
    const std::size_t t = x.dim(0), f = x.dim(1), h = p.hidden;
    auto y = Tensor<T>::tfc(t, f, h);
    std::vector<T> hs(f * h, T(0)), cs(f * h, T(0)), gates(4 * h);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < f; ++j) {
        p.step(x.row(i) + j * p.d_in, hs.data() + j * h, cs.data() + j * h,
               gates.data());
        std::copy(hs.data() + j * h, hs.data() + (j + 1) * h, y.row(i) + j * h);
      }
    return y;
  }

  static Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
              a.dim(1) == b.dim(1),
          "concat shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
    const std::size_t ca = a.dim(2), cb = b.dim(2), rows = a.dim(0) * a.dim(1);
    auto y = Tensor<T>::tfc(a.dim(0), a.dim(1), ca + cb);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(a.data() + r * ca, a.data() + (r + 1) * ca,
                y.data() + r * (ca + cb));
      std::copy(b.data() + r * cb, b.data() + (r + 1) * cb,
                y.data() + r * (ca + cb) + ca);
    }
    return y;
  }

 private:
  static void accumulate(Tensor<T>* dst, const Tensor<T>& src) {
    if (dst) *dst += src;
  }

  GradTape<T>* tape_;
};

}  // namespace dpcrn
