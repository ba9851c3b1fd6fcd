#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "drc/corpus.hpp"
#include "drc/embeddings.hpp"
#include "drc/errors.hpp"
#include "drc/model.hpp"
#include "drc/rng.hpp"

namespace drc {

struct TrainConfig {
  double learning_rate = 0.1;
  std::vector<double> learning_rate_grid{0.001, 0.01, 0.05, 0.1};
  std::size_t max_epochs = 100;
  std::size_t patience = 5;  // epochs without dev improvement before stopping
  std::uint64_t seed = 1;
  double adagrad_epsilon = 1e-8;

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("train config: learning_rate must be positive");
    for (double r : learning_rate_grid) {
      if (r <= 0) throw ConfigError("train config: grid learning rates must be positive");
    }
    if (patience < 1) throw ConfigError("train config: patience must be at least 1");
    if (max_epochs < 1) throw ConfigError("train config: max_epochs must be at least 1");
  }
};

// -log p[gold] for an explicit probability vector (reporting helper; the
// training path uses the fused logits form on the tape).
inline double cross_entropy(std::span<const double> probs, std::size_t gold) {
  if (probs.empty()) throw DimensionError("cross_entropy: empty probability vector");
  if (gold >= probs.size()) {
    throw DimensionError("cross_entropy: gold index " + std::to_string(gold) +
                         " out of range for " + std::to_string(probs.size()) + " labels");
  }
  if (!(probs[gold] > 0.0)) {
    throw NumericError("cross_entropy: zero or negative probability for the gold label");
  }
  return -std::log(probs[gold]);
}

// Uniform init in +-sqrt(6 / (fan_in + fan_out)) for matrices, zero biases.
// Deterministic given the seed: tensors fill in canonical parameter order.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params = make_params(config);
  Rng rng(derive_seed(seed, 0x1d17));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params.tensor(i);
    if (t.rank() != 2) continue;  // biases stay zero
    double fan_out = static_cast<double>(t.rows());
    double fan_in = static_cast<double>(t.cols());
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t e = 0; e < t.size(); ++e) t[e] = rng.uniform(-limit, limit);
  }
  return params;
}

// Per-parameter accumulator of squared gradients.
struct AdagradState {
  std::vector<Tensor> accum;
  double epsilon = 1e-8;

  AdagradState() = default;
  AdagradState(const ModelParams& params, double eps) : epsilon(eps) {
    accum.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      accum.push_back(Tensor::zeros_like(params.tensor(i)));
    }
  }
};

// state += grad^2; param -= lr * grad / (sqrt(state) + eps), elementwise.
inline void adagrad_update(ModelParams& params, std::span<const Tensor> grads,
                           AdagradState& state, double lr) {
  if (grads.size() != params.size() || state.accum.size() != params.size()) {
    throw DimensionError("adagrad_update: gradient/state count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.tensor(i);
    const Tensor& g = grads[i];
    Tensor& a = state.accum[i];
    if (!g.same_shape(p)) {
      throw DimensionError("adagrad_update: gradient shape " + g.shape_str() +
                           " does not match parameter " + params.name(i) + " " +
                           p.shape_str());
    }
    if (!g.finite()) {
      throw NumericError("adagrad_update: non-finite gradient for parameter " +
                         params.name(i));
    }
    for (std::size_t e = 0; e < p.size(); ++e) {
      a[e] += g[e] * g[e];
      p[e] -= lr * g[e] / (std::sqrt(a[e]) + state.epsilon);
    }
  }
}

struct EpochStats {
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
};

struct TrainingHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // index into epochs
  double best_dev_accuracy = 0.0;
};

struct TrainResult {
  Model model;
  TrainingHistory history;
};

namespace detail {

inline bool instance_correct(const LabeledInstance& inst, int predicted) {
  return std::find(inst.gold_labels.begin(), inst.gold_labels.end(), predicted) !=
         inst.gold_labels.end();
}

inline double dataset_accuracy(const ModelConfig& config, const ModelParams& params,
                               const Dataset& ds, const WordVectorTable& table) {
  if (ds.empty()) throw DataError("accuracy over an empty dataset");
  std::size_t correct = 0;
  for (const LabeledInstance& inst : ds.instances) {
    if (instance_correct(inst, predict_index(config, params, inst, table))) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

inline std::vector<Tensor> collect_grads(const Tape& tape, const TapeParams& tp,
                                         const ModelParams& params) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads.push_back(tape.grad(tp.at(params.name(i))));
  }
  return grads;
}

// Fills in dimensions a caller may leave implicit: word_dim from the table,
// num_labels from the scheme.
inline ModelConfig resolve_config(ModelConfig config, const LabelScheme& scheme,
                                  const WordVectorTable& table) {
  if (config.word_dim == 0) config.word_dim = table.dim();
  if (config.num_labels == 0) config.num_labels = scheme.labels.size();
  if (config.num_labels != scheme.labels.size()) {
    throw ConfigError("model config: num_labels " + std::to_string(config.num_labels) +
                      " does not match scheme '" + scheme.name + "' with " +
                      std::to_string(scheme.labels.size()) + " labels");
  }
  if (config.word_dim != table.dim()) {
    throw ConfigError("model config: word_dim " + std::to_string(config.word_dim) +
                      " does not match embedding dimension " + std::to_string(table.dim()));
  }
  return config;
}

}  // namespace detail

// Stochastic training: one full pass per epoch in reshuffled order with a
// per-instance Adagrad update, dev accuracy monitored for early stopping.
// Returns the parameters from the best dev epoch. Deterministic given the
// seed. Word vectors are looked up as constants and never updated.
inline TrainResult train(const Dataset& train_set, const Dataset& dev_set,
                         const ModelConfig& model_config, const TrainConfig& train_config,
                         const WordVectorTable& table) {
  if (train_set.empty()) throw DataError("train: empty training set");
  if (dev_set.empty()) throw DataError("train: empty development set");
  if (train_set.scheme.labels != dev_set.scheme.labels) {
    throw ConfigError("train: train and dev sets use different label schemes (" +
                      train_set.scheme.name + " vs " + dev_set.scheme.name + ")");
  }
  train_config.validate();
  ModelConfig config = detail::resolve_config(model_config, train_set.scheme, table);
  config.validate();
  if (config.architecture == Architecture::TreeLstm) {
    for (const Dataset* ds : {&train_set, &dev_set}) {
      for (const LabeledInstance& inst : ds->instances) {
        if (!inst.arg1_tree || !inst.arg2_tree) {
          throw DataError("train: instance " + inst.id +
                          " lacks a parse tree; call ensure_trees() first");
        }
      }
    }
  }

  ModelParams params = init_params(config, train_config.seed);
  AdagradState opt_state(params, train_config.adagrad_epsilon);
  Rng shuffle_rng(derive_seed(train_config.seed, 0x5aff1e));

  TrainingHistory history;
  std::vector<Tensor> best_snapshot = params.snapshot();
  double best_dev = -1.0;
  std::size_t best_epoch = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < train_config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const LabeledInstance& inst = train_set.instances[idx];
      Tape tape;
      TapeParams tp = register_params(tape, params, true);
      Var logits = instance_logits(tape, tp, config, inst, table);
      Var loss = tape.cross_entropy_with_logits(logits, static_cast<std::size_t>(inst.label));
      double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        throw NumericError("train: non-finite loss at instance " + inst.id);
      }
      tape.backward(loss);
      std::vector<Tensor> grads = detail::collect_grads(tape, tp, params);
      adagrad_update(params, grads, opt_state, train_config.learning_rate);
      loss_sum += loss_value;
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());
    stats.dev_accuracy = detail::dataset_accuracy(config, params, dev_set, table);
    history.epochs.push_back(stats);

    if (stats.dev_accuracy > best_dev) {  // ties keep the earlier epoch
      best_dev = stats.dev_accuracy;
      best_epoch = epoch;
      best_snapshot = params.snapshot();
    } else if (epoch - best_epoch >= train_config.patience) {
      break;
    }
  }

  params.restore(best_snapshot);
  history.best_epoch = best_epoch;
  history.best_dev_accuracy = best_dev;
  return TrainResult{Model{config, train_set.scheme, std::move(params)},
                     std::move(history)};
}

// ---------------------------------------------------------------------------
// Grid search.
// ---------------------------------------------------------------------------

struct ExperimentRecord {
  ModelConfig config;
  double learning_rate = 0.0;
  double dev_accuracy = -1.0;
  double test_accuracy = -1.0;  // -1 when no test set was evaluated
  std::size_t best_epoch = 0;
  double train_seconds = 0.0;
  std::string error;  // non-empty when the cell failed

  bool ok() const { return error.empty(); }
};

// Trains every config x learning-rate cell. Cell seeds derive from the base
// seed and the cell index, so results do not depend on scheduling; cells
// run on up to `jobs` threads. Per-cell failures are recorded and the grid
// continues.
inline std::vector<ExperimentRecord> grid_search(
    const Dataset& train_set, const Dataset& dev_set, const Dataset* test_set,
    std::span<const ModelConfig> configs, std::span<const double> rates,
    const TrainConfig& base, const WordVectorTable& table, unsigned jobs = 1) {
  if (configs.empty() || rates.empty()) {
    throw ConfigError("grid_search: need at least one config and one learning rate");
  }
  const std::size_t cells = configs.size() * rates.size();
  std::vector<ExperimentRecord> records(cells);

  auto run_cell = [&](std::size_t cell) {
    ExperimentRecord& rec = records[cell];
    rec.config = configs[cell / rates.size()];
    rec.learning_rate = rates[cell % rates.size()];
    TrainConfig tc = base;
    tc.learning_rate = rec.learning_rate;
    tc.seed = derive_seed(base.seed, cell);
    auto started = std::chrono::steady_clock::now();
    try {
      TrainResult result = train(train_set, dev_set, rec.config, tc, table);
      rec.config = result.model.config;  // resolved dims
      rec.dev_accuracy = result.history.best_dev_accuracy;
      rec.best_epoch = result.history.best_epoch;
      if (test_set && !test_set->empty()) {
        rec.test_accuracy =
            detail::dataset_accuracy(result.model.config, result.model.params, *test_set, table);
      }
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    rec.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  unsigned workers = std::min<unsigned>(jobs > 0 ? jobs : 1,
                                        static_cast<unsigned>(cells));
  if (workers <= 1) {
    for (std::size_t c = 0; c < cells; ++c) run_cell(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t c = next.fetch_add(1); c < cells; c = next.fetch_add(1)) {
          run_cell(c);
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }
  return records;
}

// Best cell by dev accuracy; ties prefer the smaller model (fewer hidden
// layers, then smaller word vectors), then the lower learning rate.
// Returns nullptr when every cell failed.
inline const ExperimentRecord* best_record(std::span<const ExperimentRecord> records) {
  const ExperimentRecord* best = nullptr;
  for (const ExperimentRecord& r : records) {
    if (!r.ok() || r.dev_accuracy < 0) continue;
    if (!best) {
      best = &r;
      continue;
    }
    if (r.dev_accuracy != best->dev_accuracy) {
      if (r.dev_accuracy > best->dev_accuracy) best = &r;
      continue;
    }
    auto key = [](const ExperimentRecord& x) {
      return std::make_tuple(x.config.hidden_layers, x.config.word_dim, x.learning_rate);
    };
    if (key(r) < key(*best)) best = &r;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Record serialization and the configuration-table report.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json record_to_json(const ExperimentRecord& r) {
  nlohmann::ordered_json j;
  j["config"] = config_to_json(r.config);
  j["learning_rate"] = r.learning_rate;
  j["dev_accuracy"] = r.dev_accuracy;
  if (r.test_accuracy >= 0) j["test_accuracy"] = r.test_accuracy;
  j["best_epoch"] = r.best_epoch;
  j["train_seconds"] = r.train_seconds;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

template <typename Json>
inline ExperimentRecord record_from_json(const Json& j) {
  ExperimentRecord r;
  r.config = config_from_json(j.at("config"));
  r.learning_rate = j.at("learning_rate").template get<double>();
  r.dev_accuracy = j.at("dev_accuracy").template get<double>();
  if (j.contains("test_accuracy")) {
    r.test_accuracy = j.at("test_accuracy").template get<double>();
  }
  if (j.contains("best_epoch")) r.best_epoch = j.at("best_epoch").template get<std::size_t>();
  if (j.contains("train_seconds")) {
    r.train_seconds = j.at("train_seconds").template get<double>();
  }
  if (j.contains("error")) r.error = j.at("error").template get<std::string>();
  return r;
}

// Newline-delimited JSON, one record per line.
inline void save_experiment_records(std::span<const ExperimentRecord> records,
                                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write records file: " + path);
  for (const ExperimentRecord& r : records) {
    out << record_to_json(r).dump() << '\n';
  }
}

inline std::vector<ExperimentRecord> load_experiment_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open records file: " + path);
  std::vector<ExperimentRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad record: " + e.what());
    }
  }
  return records;
}

// Renders the grid as one row per architecture x word-vector size and one
// column per hidden-layer count x pooling function, best cell starred.
// Cells show the best accuracy over learning rates; test accuracy when
// every successful cell has one, dev accuracy otherwise.
inline std::string render_experiment_table(std::span<const ExperimentRecord> records) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
    return std::string(buf);
  };

  bool use_test = true;
  for (const ExperimentRecord& r : records) {
    if (r.ok() && r.test_accuracy < 0) use_test = false;
  }
  auto metric = [&](const ExperimentRecord& r) {
    return use_test ? r.test_accuracy : r.dev_accuracy;
  };

  std::vector<std::size_t> depths;
  std::vector<std::pair<Architecture, std::size_t>> rows;
  for (const ExperimentRecord& r : records) {
    if (!r.ok()) continue;
    if (std::find(depths.begin(), depths.end(), r.config.hidden_layers) == depths.end()) {
      depths.push_back(r.config.hidden_layers);
    }
    auto row = std::make_pair(r.config.architecture, r.config.word_dim);
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
  }
  std::sort(depths.begin(), depths.end());
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return static_cast<int>(a.first) < static_cast<int>(b.first);
    return a.second < b.second;
  });
  const Pooling poolings[] = {Pooling::Max, Pooling::Mean, Pooling::Sum, Pooling::Last};

  // best over learning rates per (row, depth, pooling) cell
  auto cell_best = [&](const std::pair<Architecture, std::size_t>& row, std::size_t depth,
                       Pooling pool) -> const ExperimentRecord* {
    const ExperimentRecord* best = nullptr;
    for (const ExperimentRecord& r : records) {
      if (!r.ok()) continue;
      if (r.config.architecture != row.first || r.config.word_dim != row.second) continue;
      if (r.config.hidden_layers != depth || r.config.pooling != pool) continue;
      if (!best || metric(r) > metric(*best)) best = &r;
    }
    return best;
  };

  const ExperimentRecord* overall = nullptr;
  for (const ExperimentRecord& r : records) {
    if (!r.ok()) continue;
    if (!overall || metric(r) > metric(*overall)) overall = &r;
  }

  std::string out;
  out += "accuracy in %, per-cell best over learning rates (metric: ";
  out += use_test ? "test" : "dev";
  out += ", * = best)\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-12s %5s", "architecture", "k");
  out += buf;
  for (std::size_t d : depths) {
    for (Pooling p : poolings) {
      std::string head = std::to_string(d) + "h/" + pooling_name(p);
      std::snprintf(buf, sizeof(buf), " %9s", head.c_str());
      out += buf;
    }
  }
  out += '\n';
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%-12s %5zu", architecture_name(row.first), row.second);
    out += buf;
    for (std::size_t d : depths) {
      for (Pooling p : poolings) {
        const ExperimentRecord* r = cell_best(row, d, p);
        std::string cell = "-";
        if (r) {
          cell = fmt(metric(*r));
          if (overall && r->config.architecture == overall->config.architecture &&
              r->config.word_dim == overall->config.word_dim &&
              r->config.hidden_layers == overall->config.hidden_layers &&
              r->config.pooling == overall->config.pooling &&
              metric(*r) == metric(*overall)) {
            cell += "*";
          }
        }
        std::snprintf(buf, sizeof(buf), " %9s", cell.c_str());
        out += buf;
      }
    }
    out += '\n';
  }
  std::size_t failures = 0;
  for (const ExperimentRecord& r : records) {
    if (!r.ok()) ++failures;
  }
  if (failures) {
    out += std::to_string(failures) + " cell(s) failed; see the records file\n";
  }
  return out;
}

}  // namespace drc
