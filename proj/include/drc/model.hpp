#pragma once

#include <algorithm>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "drc/autodiff.hpp"
#include "drc/corpus.hpp"
#include "drc/embeddings.hpp"
#include "drc/errors.hpp"
#include "drc/tensor.hpp"

namespace drc {

enum class Architecture { Feedforward, Lstm, TreeLstm };

inline const char* architecture_name(Architecture a) {
  switch (a) {
    case Architecture::Feedforward: return "feedforward";
    case Architecture::Lstm: return "lstm";
    case Architecture::TreeLstm: return "tree-lstm";
  }
  return "?";
}

inline Architecture architecture_from_name(const std::string& name) {
  if (name == "feedforward" || name == "ff") return Architecture::Feedforward;
  if (name == "lstm") return Architecture::Lstm;
  if (name == "tree-lstm" || name == "treelstm") return Architecture::TreeLstm;
  throw ConfigError("unknown architecture: '" + name + "'");
}

struct ModelConfig {
  Architecture architecture = Architecture::Feedforward;
  Pooling pooling = Pooling::Sum;
  std::size_t word_dim = 0;      // k
  std::size_t state_dim = 0;     // LSTM/tree state size; 0 means equal to word_dim
  std::size_t hidden_dim = 300;  // d
  std::size_t hidden_layers = 1; // T
  std::size_t num_labels = 0;

  std::size_t effective_state_dim() const { return state_dim ? state_dim : word_dim; }

  // Dimension of the argument vectors the classifier consumes.
  std::size_t encoder_dim() const {
    return architecture == Architecture::Feedforward ? word_dim : effective_state_dim();
  }

  void validate() const {
    if (word_dim == 0) throw ConfigError("model config: word_dim must be positive");
    if (num_labels == 0) throw ConfigError("model config: num_labels must be positive");
    if (hidden_layers > 4) {
      throw ConfigError("model config: at most 4 hidden layers are supported");
    }
    if (hidden_layers > 0 && hidden_dim == 0) {
      throw ConfigError("model config: hidden_dim must be positive");
    }
    if (architecture == Architecture::Feedforward && pooling == Pooling::Last) {
      throw ConfigError("model config: 'last' pooling requires a sequential or tree model");
    }
  }
};

// Ordered, name-addressed collection of trainable tensors. Insertion order
// is the canonical order for initialization, gradient gathering, Adagrad
// state, and serialization.
class ModelParams {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter: " + name);
    index_[name] = values_.size();
    names_.push_back(name);
    values_.push_back(std::move(t));
    return values_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("unknown parameter: " + name);
    return values_[it->second];
  }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("unknown parameter: " + name);
    return values_[it->second];
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& tensor(std::size_t i) { return values_[i]; }
  const Tensor& tensor(std::size_t i) const { return values_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Tensor& t : values_) n += t.size();
    return n;
  }

  std::vector<Tensor> snapshot() const { return values_; }

  void restore(const std::vector<Tensor>& snap) {
    if (snap.size() != values_.size()) {
      throw DimensionError("params restore: tensor count mismatch");
    }
    for (std::size_t i = 0; i < snap.size(); ++i) {
      if (!snap[i].same_shape(values_[i])) {
        throw DimensionError("params restore: shape mismatch for " + names_[i]);
      }
      values_[i] = snap[i];
    }
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Zero-filled parameters with the canonical shapes for a config.
//
// The sequential LSTM owns one set of gate parameters shared by both
// arguments; likewise the tree LSTM. Only the classifier's W1/W2
// distinguish Arg1 from Arg2.
inline ModelParams make_params(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  const std::size_t k = config.word_dim;
  const std::size_t h = config.effective_state_dim();
  const std::size_t d = config.hidden_dim;
  const std::size_t L = config.num_labels;
  const std::size_t m = config.encoder_dim();

  if (config.architecture == Architecture::Lstm) {
    for (const char* g : {"i", "f", "o", "c"}) {
      std::string gate(g);
      p.add("lstm.W_" + gate, Tensor({h, k}));
      p.add("lstm.U_" + gate, Tensor({h, h}));
      p.add("lstm.b_" + gate, Tensor({h}));
    }
  } else if (config.architecture == Architecture::TreeLstm) {
    p.add("tree.W_i", Tensor({h, k}));
    p.add("tree.U_i_l", Tensor({h, h}));
    p.add("tree.U_i_r", Tensor({h, h}));
    p.add("tree.b_i", Tensor({h}));
    p.add("tree.W_f", Tensor({h, k}));
    p.add("tree.U_f_ll", Tensor({h, h}));
    p.add("tree.U_f_lr", Tensor({h, h}));
    p.add("tree.U_f_rl", Tensor({h, h}));
    p.add("tree.U_f_rr", Tensor({h, h}));
    p.add("tree.b_f", Tensor({h}));
    p.add("tree.W_o", Tensor({h, k}));
    p.add("tree.U_o_l", Tensor({h, h}));
    p.add("tree.U_o_r", Tensor({h, h}));
    p.add("tree.b_o", Tensor({h}));
    p.add("tree.W_c", Tensor({h, k}));
    p.add("tree.U_c_l", Tensor({h, h}));
    p.add("tree.U_c_r", Tensor({h, h}));
    p.add("tree.b_c", Tensor({h}));
  }

  if (config.hidden_layers == 0) {
    // softmax directly on the linear inter-argument combination
    p.add("cls.W1", Tensor({L, m}));
    p.add("cls.W2", Tensor({L, m}));
    p.add("cls.b_o", Tensor({L}));
  } else {
    p.add("cls.W1", Tensor({d, m}));
    p.add("cls.W2", Tensor({d, m}));
    p.add("cls.b_h1", Tensor({d}));
    for (std::size_t t = 2; t <= config.hidden_layers; ++t) {
      p.add("cls.W_h" + std::to_string(t), Tensor({d, d}));
      p.add("cls.b_h" + std::to_string(t), Tensor({d}));
    }
    p.add("cls.W_o", Tensor({L, d}));
    p.add("cls.b_o", Tensor({L}));
  }
  return p;
}

// Ties the tree LSTM's child matrices so composition is symmetric under
// swapping children: U_*_r := U_*_l for the i/o/c gates, and the forget
// gates become mirror images of each other.
inline void tie_tree_child_matrices(ModelParams& p) {
  p.at("tree.U_i_r") = p.at("tree.U_i_l");
  p.at("tree.U_o_r") = p.at("tree.U_o_l");
  p.at("tree.U_c_r") = p.at("tree.U_c_l");
  p.at("tree.U_f_rr") = p.at("tree.U_f_ll");
  p.at("tree.U_f_rl") = p.at("tree.U_f_lr");
}

// Per-tape handles for registered parameters.
struct TapeParams {
  std::unordered_map<std::string, Var> vars;

  Var at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::logic_error("parameter not on tape: " + name);
    return it->second;
  }
};

// Registers every parameter on the tape. Trainable registration tracks
// gradients; otherwise parameters enter as constants (inference).
inline TapeParams register_params(Tape& tape, const ModelParams& params, bool trainable) {
  TapeParams tp;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor* t = &params.tensor(i);
    tp.vars[params.name(i)] = trainable ? tape.parameter_ref(t) : tape.constant_ref(t);
  }
  return tp;
}

// ---------------------------------------------------------------------------
// Encoders.
// ---------------------------------------------------------------------------

// Bag-of-words encoder: elementwise pooling over the argument's word
// vectors. Token order cannot affect the result.
inline Var encode_ff(Tape& tape, std::span<const std::string> tokens,
                     const WordVectorTable& table, Pooling pooling) {
  if (tokens.empty()) throw DimensionError("encode_ff: empty argument");
  if (pooling == Pooling::Last) {
    throw ConfigError("encode_ff: 'last' pooling requires a sequential model");
  }
  std::vector<Var> vecs;
  vecs.reserve(tokens.size());
  for (const std::string& t : tokens) vecs.push_back(tape.constant_ref(&table.lookup(t)));
  return tape.pool(pooling, vecs);
}

struct LstmGateVars {
  Var W_i, U_i, b_i;
  Var W_f, U_f, b_f;
  Var W_o, U_o, b_o;
  Var W_c, U_c, b_c;
};

inline LstmGateVars lstm_gate_vars(const TapeParams& tp) {
  return LstmGateVars{tp.at("lstm.W_i"), tp.at("lstm.U_i"), tp.at("lstm.b_i"),
                      tp.at("lstm.W_f"), tp.at("lstm.U_f"), tp.at("lstm.b_f"),
                      tp.at("lstm.W_o"), tp.at("lstm.U_o"), tp.at("lstm.b_o"),
                      tp.at("lstm.W_c"), tp.at("lstm.U_c"), tp.at("lstm.b_c")};
}

struct LstmState {
  Var s;  // hidden state
  Var c;  // memory cell
};

// One LSTM step:
//   i = sigmoid(W_i w + U_i s_prev + b_i)      f = sigmoid(W_f w + U_f s_prev + b_f)
//   o = sigmoid(W_o w + U_o s_prev + b_o)      c' = tanh(W_c w + U_c s_prev + b_c)
//   c = c' * i + c_prev * f                    s = c * o
inline LstmState lstm_step(Tape& tape, const LstmGateVars& g, Var w, LstmState prev) {
  Var i = tape.sigmoid(tape.add(tape.affine(g.W_i, w, g.b_i), tape.matvec(g.U_i, prev.s)));
  Var f = tape.sigmoid(tape.add(tape.affine(g.W_f, w, g.b_f), tape.matvec(g.U_f, prev.s)));
  Var o = tape.sigmoid(tape.add(tape.affine(g.W_o, w, g.b_o), tape.matvec(g.U_o, prev.s)));
  Var cand = tape.tanh(tape.add(tape.affine(g.W_c, w, g.b_c), tape.matvec(g.U_c, prev.s)));
  Var c = tape.add(tape.mul(cand, i), tape.mul(prev.c, f));
  Var s = tape.mul(c, o);
  return LstmState{s, c};
}

// Runs the LSTM left to right from zero state and cell, then pools the
// hidden states (or returns the last one).
inline Var encode_lstm(Tape& tape, const LstmGateVars& g, std::span<const std::string> tokens,
                       const WordVectorTable& table, std::size_t state_dim, Pooling pooling) {
  if (tokens.empty()) throw DimensionError("encode_lstm: empty argument");
  LstmState st{tape.constant(Tensor({state_dim})), tape.constant(Tensor({state_dim}))};
  std::vector<Var> states;
  states.reserve(tokens.size());
  for (const std::string& t : tokens) {
    Var w = tape.constant_ref(&table.lookup(t));
    st = lstm_step(tape, g, w, st);
    states.push_back(st.s);
  }
  if (pooling == Pooling::Last) return states.back();
  return tape.pool(pooling, states);
}

struct TreeGateVars {
  Var W_i, U_i_l, U_i_r, b_i;
  Var W_f, U_f_ll, U_f_lr, U_f_rl, U_f_rr, b_f;
  Var W_o, U_o_l, U_o_r, b_o;
  Var W_c, U_c_l, U_c_r, b_c;
};

inline TreeGateVars tree_gate_vars(const TapeParams& tp) {
  return TreeGateVars{
      tp.at("tree.W_i"), tp.at("tree.U_i_l"),  tp.at("tree.U_i_r"),  tp.at("tree.b_i"),
      tp.at("tree.W_f"), tp.at("tree.U_f_ll"), tp.at("tree.U_f_lr"), tp.at("tree.U_f_rl"),
      tp.at("tree.U_f_rr"), tp.at("tree.b_f"),
      tp.at("tree.W_o"), tp.at("tree.U_o_l"),  tp.at("tree.U_o_r"),  tp.at("tree.b_o"),
      tp.at("tree.W_c"), tp.at("tree.U_c_l"),  tp.at("tree.U_c_r"),  tp.at("tree.b_c")};
}

// Binary tree-LSTM composition with per-child U matrices and one forget
// gate per child. Uses the same cell form as the sequential model, so a
// single leaf with zero children reduces exactly to one lstm_step.
inline LstmState tree_compose(Tape& tape, const TreeGateVars& g, Var x, LstmState left,
                              LstmState right) {
  auto gate_pre = [&](Var W, Var Ul, Var Ur, Var b) {
    return tape.add(tape.affine(W, x, b),
                    tape.add(tape.matvec(Ul, left.s), tape.matvec(Ur, right.s)));
  };
  Var i = tape.sigmoid(gate_pre(g.W_i, g.U_i_l, g.U_i_r, g.b_i));
  Var f_l = tape.sigmoid(gate_pre(g.W_f, g.U_f_ll, g.U_f_lr, g.b_f));
  Var f_r = tape.sigmoid(gate_pre(g.W_f, g.U_f_rl, g.U_f_rr, g.b_f));
  Var o = tape.sigmoid(gate_pre(g.W_o, g.U_o_l, g.U_o_r, g.b_o));
  Var cand = tape.tanh(gate_pre(g.W_c, g.U_c_l, g.U_c_r, g.b_c));
  Var c = tape.add(tape.mul(cand, i),
                   tape.add(tape.mul(left.c, f_l), tape.mul(right.c, f_r)));
  Var s = tape.mul(c, o);
  return LstmState{s, c};
}

// Bottom-up composition over a binarized parse. Leaves consume word vectors
// with zero child states; interior nodes have no word input. States are
// collected in post-order and pooled; 'last' takes the root state.
inline Var encode_tree(Tape& tape, const TreeGateVars& g, const TreePtr& tree,
                       const WordVectorTable& table, std::size_t word_dim,
                       std::size_t state_dim, Pooling pooling) {
  if (!tree) throw DimensionError("encode_tree: empty tree");
  Var zero_state = tape.constant(Tensor({state_dim}));
  Var zero_cell = tape.constant(Tensor({state_dim}));
  Var zero_word = tape.constant(Tensor({word_dim}));
  std::vector<Var> states;

  auto go = [&](auto&& self, const TreePtr& node) -> LstmState {
    LstmState st;
    if (node->leaf()) {
      Var w = tape.constant_ref(&table.lookup(node->token));
      st = tree_compose(tape, g, w, LstmState{zero_state, zero_cell},
                        LstmState{zero_state, zero_cell});
    } else {
      LstmState l = self(self, node->left);
      LstmState r = self(self, node->right);
      st = tree_compose(tape, g, zero_word, l, r);
    }
    states.push_back(st.s);
    return st;
  };
  go(go, tree);

  if (pooling == Pooling::Last) return states.back();  // root
  return tape.pool(pooling, states);
}

// ---------------------------------------------------------------------------
// Inter-argument interaction and output layer.
// ---------------------------------------------------------------------------

// h1 = tanh(W1 a1 + W2 a2 + b_h1), h_t = tanh(W_ht h_{t-1} + b_ht),
// logits = W_o h_T + b_o. With no hidden layer the output layer consumes
// the linear combination directly: logits = W1 a1 + W2 a2 + b_o.
inline Var interact_logits(Tape& tape, const TapeParams& tp, const ModelConfig& config,
                           Var a1, Var a2) {
  if (config.hidden_layers == 0) {
    return tape.add(tape.matvec(tp.at("cls.W1"), a1),
                    tape.affine(tp.at("cls.W2"), a2, tp.at("cls.b_o")));
  }
  Var h = tape.tanh(tape.add(tape.matvec(tp.at("cls.W1"), a1),
                             tape.affine(tp.at("cls.W2"), a2, tp.at("cls.b_h1"))));
  for (std::size_t t = 2; t <= config.hidden_layers; ++t) {
    std::string suffix = std::to_string(t);
    h = tape.tanh(tape.affine(tp.at("cls.W_h" + suffix), h, tp.at("cls.b_h" + suffix)));
  }
  return tape.affine(tp.at("cls.W_o"), h, tp.at("cls.b_o"));
}

// Full forward pass for one instance, up to the logits.
inline Var instance_logits(Tape& tape, const TapeParams& tp, const ModelConfig& config,
                           const LabeledInstance& inst, const WordVectorTable& table) {
  Var a1, a2;
  switch (config.architecture) {
    case Architecture::Feedforward:
      a1 = encode_ff(tape, inst.arg1_tokens, table, config.pooling);
      a2 = encode_ff(tape, inst.arg2_tokens, table, config.pooling);
      break;
    case Architecture::Lstm: {
      LstmGateVars g = lstm_gate_vars(tp);
      std::size_t h = config.effective_state_dim();
      a1 = encode_lstm(tape, g, inst.arg1_tokens, table, h, config.pooling);
      a2 = encode_lstm(tape, g, inst.arg2_tokens, table, h, config.pooling);
      break;
    }
    case Architecture::TreeLstm: {
      if (!inst.arg1_tree || !inst.arg2_tree) {
        throw DataError("instance " + inst.id +
                        " lacks a parse tree; call ensure_trees() for fallbacks");
      }
      TreeGateVars g = tree_gate_vars(tp);
      std::size_t h = config.effective_state_dim();
      a1 = encode_tree(tape, g, inst.arg1_tree, table, config.word_dim, h, config.pooling);
      a2 = encode_tree(tape, g, inst.arg2_tree, table, config.word_dim, h, config.pooling);
      break;
    }
  }
  return interact_logits(tape, tp, config, a1, a2);
}

// ---------------------------------------------------------------------------
// Trained model: config + label scheme + parameters.
// ---------------------------------------------------------------------------

struct Model {
  ModelConfig config;
  LabelScheme scheme;
  ModelParams params;
};

inline std::vector<double> predict_probabilities(const ModelConfig& config,
                                                 const ModelParams& params,
                                                 const LabeledInstance& inst,
                                                 const WordVectorTable& table) {
  Tape tape;
  TapeParams tp = register_params(tape, params, false);
  Var probs = tape.softmax(instance_logits(tape, tp, config, inst, table));
  return tape.value(probs).data();
}

// Argmax label index; ties break toward the lowest index.
inline int predict_index(const ModelConfig& config, const ModelParams& params,
                         const LabeledInstance& inst, const WordVectorTable& table) {
  std::vector<double> p = predict_probabilities(config, params, inst, table);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline int predict(const Model& m, const LabeledInstance& inst, const WordVectorTable& table) {
  return predict_index(m.config, m.params, inst, table);
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  return nlohmann::ordered_json{{"architecture", architecture_name(c.architecture)},
                                {"pooling", pooling_name(c.pooling)},
                                {"word_dim", c.word_dim},
                                {"state_dim", c.state_dim},
                                {"hidden_dim", c.hidden_dim},
                                {"hidden_layers", c.hidden_layers},
                                {"num_labels", c.num_labels}};
}

template <typename Json>
inline ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  c.architecture = architecture_from_name(j.at("architecture").template get<std::string>());
  c.pooling = pooling_from_name(j.at("pooling").template get<std::string>());
  c.word_dim = j.at("word_dim").template get<std::size_t>();
  if (j.contains("state_dim")) c.state_dim = j.at("state_dim").template get<std::size_t>();
  if (j.contains("hidden_dim")) c.hidden_dim = j.at("hidden_dim").template get<std::size_t>();
  if (j.contains("hidden_layers")) {
    c.hidden_layers = j.at("hidden_layers").template get<std::size_t>();
  }
  c.num_labels = j.at("num_labels").template get<std::size_t>();
  return c;
}

// Self-describing model file: config, label scheme, and every parameter
// tensor with its shape. Loading rejects any config/shape mismatch.
inline void save_model(const Model& m, const std::string& path) {
  nlohmann::ordered_json j;
  j["format"] = "drc-model";
  j["version"] = 1;
  j["config"] = config_to_json(m.config);
  j["scheme"] = {{"name", m.scheme.name},
                 {"rule", m.scheme.rule == SenseRule::PdtbLevel2 ? "pdtb-level2"
                                                                 : "as-provided"},
                 {"labels", m.scheme.labels}};
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const Tensor& t = m.params.tensor(i);
    params.push_back(nlohmann::ordered_json{
        {"name", m.params.name(i)}, {"shape", t.shape()}, {"data", t.data()}});
  }
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file: " + path);
  out << j.dump(2) << '\n';
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": malformed model file: " + e.what());
  }
  if (!j.contains("format") || j["format"] != "drc-model") {
    throw DataError(path + ": not a model file");
  }

  Model m;
  m.config = config_from_json(j.at("config"));
  m.config.validate();

  const auto& js = j.at("scheme");
  m.scheme.name = js.at("name").get<std::string>();
  m.scheme.rule = js.at("rule").get<std::string>() == "pdtb-level2" ? SenseRule::PdtbLevel2
                                                                    : SenseRule::AsProvided;
  m.scheme.labels = js.at("labels").get<std::vector<std::string>>();
  if (m.scheme.labels.size() != m.config.num_labels) {
    throw DataError(path + ": label list size " + std::to_string(m.scheme.labels.size()) +
                    " does not match config num_labels " +
                    std::to_string(m.config.num_labels));
  }

  m.params = make_params(m.config);
  std::size_t seen = 0;
  for (const auto& pj : j.at("params")) {
    std::string name = pj.at("name").get<std::string>();
    if (!m.params.has(name)) {
      throw DataError(path + ": unexpected parameter '" + name + "' for this config");
    }
    Tensor& dst = m.params.at(name);
    std::vector<std::size_t> shape = pj.at("shape").get<std::vector<std::size_t>>();
    if (shape != dst.shape()) {
      throw DataError(path + ": parameter '" + name + "' has shape " +
                      shape_to_string(shape) + ", config requires " + dst.shape_str());
    }
    std::vector<double> data = pj.at("data").get<std::vector<double>>();
    Tensor t(shape, std::move(data));
    if (!t.finite()) throw DataError(path + ": parameter '" + name + "' has non-finite values");
    dst = std::move(t);
    ++seen;
  }
  if (seen != m.params.size()) {
    throw DataError(path + ": model file holds " + std::to_string(seen) + " parameters, config requires " +
                    std::to_string(m.params.size()));
  }
  return m;
}

}  // namespace drc
