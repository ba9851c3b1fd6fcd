#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "drc/corpus.hpp"
#include "drc/errors.hpp"
#include "drc/model.hpp"
#include "drc/rng.hpp"
#include "drc/training.hpp"

namespace drc {

// One evaluated instance. A prediction is correct when it matches any gold
// label; in the PDTB level-2 setting the gold list has exactly one entry
// (the first annotated label).
struct Prediction {
  std::string id;
  std::vector<std::string> gold;
  std::string predicted;

  bool correct() const {
    return std::find(gold.begin(), gold.end(), predicted) != gold.end();
  }
};

struct PredictionSet {
  std::vector<Prediction> items;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }

  void validate_ids() const {
    std::unordered_map<std::string, std::size_t> seen;
    for (const Prediction& p : items) {
      if (++seen[p.id] > 1) {
        throw DataError("prediction set: duplicate instance id '" + p.id + "'");
      }
    }
  }
};

inline double accuracy(const PredictionSet& preds) {
  if (preds.empty()) throw DataError("accuracy: empty prediction set");
  std::size_t correct = 0;
  for (const Prediction& p : preds.items) {
    if (p.correct()) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

inline PredictionSet predict_dataset(const Model& model, const Dataset& ds,
                                     const WordVectorTable& table) {
  PredictionSet out;
  out.items.reserve(ds.size());
  for (const LabeledInstance& inst : ds.instances) {
    Prediction p;
    p.id = inst.id;
    for (int g : inst.gold_labels) p.gold.push_back(model.scheme.labels[g]);
    p.predicted = model.scheme.labels[predict(model, inst, table)];
    out.items.push_back(std::move(p));
  }
  return out;
}

// Predicts the most frequent training label for every evaluation instance;
// frequency ties break toward the lowest label index.
inline PredictionSet majority_baseline(const Dataset& train_set, const Dataset& eval_set) {
  if (train_set.empty()) throw DataError("majority_baseline: empty training set");
  std::vector<std::size_t> counts = label_distribution(train_set);
  std::size_t majority =
      static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) -
                               counts.begin());
  const std::string& label = train_set.scheme.labels[majority];
  PredictionSet out;
  out.items.reserve(eval_set.size());
  for (const LabeledInstance& inst : eval_set.instances) {
    Prediction p;
    p.id = inst.id;
    for (int g : inst.gold_labels) p.gold.push_back(eval_set.scheme.labels[g]);
    p.predicted = label;
    out.items.push_back(std::move(p));
  }
  return out;
}

// Paired bootstrap test of "system a beats system b": resamples instances
// with replacement and reports the fraction of resamples where a does not
// come out ahead (ties count against a). Both sets must cover the same
// instance ids.
inline double bootstrap_test(const PredictionSet& a, const PredictionSet& b,
                             std::size_t resamples = 10000, std::uint64_t seed = 1) {
  if (a.empty() || b.empty()) throw DataError("bootstrap_test: empty prediction set");
  if (a.size() != b.size()) {
    throw DataError("bootstrap_test: prediction sets differ in size (" +
                    std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  a.validate_ids();
  b.validate_ids();
  std::unordered_map<std::string, bool> b_correct;
  b_correct.reserve(b.size());
  for (const Prediction& p : b.items) b_correct[p.id] = p.correct();

  const std::size_t n = a.size();
  std::vector<std::uint8_t> ca(n), cb(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Prediction& p = a.items[i];
    auto it = b_correct.find(p.id);
    if (it == b_correct.end()) {
      throw DataError("bootstrap_test: instance '" + p.id + "' is missing from system b");
    }
    ca[i] = p.correct() ? 1 : 0;
    cb[i] = it->second ? 1 : 0;
  }

  Rng rng(seed);
  std::size_t not_ahead = 0;
  for (std::size_t r = 0; r < resamples; ++r) {
    std::size_t sum_a = 0, sum_b = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t j = rng.below(n);
      sum_a += ca[j];
      sum_b += cb[j];
    }
    if (sum_a <= sum_b) ++not_ahead;
  }
  return static_cast<double>(not_ahead) / static_cast<double>(resamples);
}

// ---------------------------------------------------------------------------
// Prediction set serialization (newline-delimited JSON).
// ---------------------------------------------------------------------------

inline void save_predictions(const PredictionSet& preds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write predictions file: " + path);
  for (const Prediction& p : preds.items) {
    nlohmann::ordered_json j{{"id", p.id}, {"gold", p.gold}, {"pred", p.predicted}};
    out << j.dump() << '\n';
  }
}

inline PredictionSet load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions file: " + path);
  PredictionSet preds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      Prediction p;
      p.id = j.at("id").get<std::string>();
      p.gold = j.at("gold").get<std::vector<std::string>>();
      p.predicted = j.at("pred").get<std::string>();
      preds.items.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad prediction: " + e.what());
    }
  }
  preds.validate_ids();
  return preds;
}

// Two-column system/accuracy comparison table, best row starred.
inline std::string render_comparison_table(
    std::span<const std::pair<std::string, double>> rows) {
  std::size_t width = 5;
  for (const auto& [name, acc] : rows) width = std::max(width, name.size());
  double best = rows.empty() ? 0.0 : rows[0].second;
  for (const auto& [name, acc] : rows) best = std::max(best, acc);
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-*s  %s\n", static_cast<int>(width), "Model",
                "Accuracy");
  out += buf;
  out += std::string(width + 10, '-') + "\n";
  for (const auto& [name, acc] : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %6.2f%s\n", static_cast<int>(width), name.c_str(),
                  acc * 100.0, acc == best ? " *" : "");
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation.
// ---------------------------------------------------------------------------

// Seeded fold assignment: a partition with fold sizes differing by at most
// one. Returns fold index per instance.
inline std::vector<std::size_t> make_folds(std::size_t n, std::size_t folds,
                                           std::uint64_t seed) {
  if (folds < 2) throw ConfigError("make_folds: need at least 2 folds");
  if (n < folds) {
    throw DataError("make_folds: fewer instances (" + std::to_string(n) + ") than folds (" +
                    std::to_string(folds) + ")");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0xf01d));
  rng.shuffle(order);
  std::vector<std::size_t> fold_of(n);
  for (std::size_t i = 0; i < n; ++i) fold_of[order[i]] = i % folds;
  return fold_of;
}

struct CrossValidationResult {
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0.0;
};

// Generic driver: each fold is held out once for testing while the next
// fold (cyclically) serves as the development set and the rest train.
// `run` is called as run(train_set, dev_set, test_set, fold) -> accuracy.
template <typename RunFold>
inline CrossValidationResult cross_validate_with(const Dataset& data, std::size_t folds,
                                                 std::uint64_t seed, RunFold&& run) {
  std::vector<std::size_t> fold_of = make_folds(data.size(), folds, seed);
  CrossValidationResult result;
  result.fold_accuracy.reserve(folds);
  for (std::size_t held_out = 0; held_out < folds; ++held_out) {
    std::size_t dev_fold = (held_out + 1) % folds;
    Dataset train_part{data.scheme, {}};
    Dataset dev_part{data.scheme, {}};
    Dataset test_part{data.scheme, {}};
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (fold_of[i] == held_out) {
        test_part.instances.push_back(data.instances[i]);
      } else if (fold_of[i] == dev_fold) {
        dev_part.instances.push_back(data.instances[i]);
      } else {
        train_part.instances.push_back(data.instances[i]);
      }
    }
    if (train_part.empty()) {
      throw ConfigError("cross_validate: no training data left with " +
                        std::to_string(folds) + " folds");
    }
    result.fold_accuracy.push_back(run(train_part, dev_part, test_part, held_out));
  }
  result.mean_accuracy =
      std::accumulate(result.fold_accuracy.begin(), result.fold_accuracy.end(), 0.0) /
      static_cast<double>(folds);
  return result;
}

// Neural cross-validation in the Chinese-setting style: mean accuracy over
// `folds` runs, each trained with early stopping on its dev fold.
inline CrossValidationResult cross_validate(const Dataset& data,
                                            const ModelConfig& model_config,
                                            const TrainConfig& train_config,
                                            const WordVectorTable& table,
                                            std::size_t folds = 7) {
  return cross_validate_with(
      data, folds, train_config.seed,
      [&](const Dataset& train_part, const Dataset& dev_part, const Dataset& test_part,
          std::size_t fold) {
        TrainConfig tc = train_config;
        tc.seed = derive_seed(train_config.seed, 0xc0de + fold);
        TrainResult r = train(train_part, dev_part, model_config, tc, table);
        return detail::dataset_accuracy(r.model.config, r.model.params, test_part, table);
      });
}

}  // namespace drc
