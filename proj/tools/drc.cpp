// Command-line driver: train, evaluate, predict, grid, compare, report.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
// failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "drc/corpus.hpp"
#include "drc/embeddings.hpp"
#include "drc/errors.hpp"
#include "drc/evaluation.hpp"
#include "drc/model.hpp"
#include "drc/training.hpp"

namespace {

using nlohmann::json;

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw drc::ConfigError("cannot open config file: " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::parse_error& e) {
    throw drc::ConfigError(path + ": malformed JSON: " + e.what());
  }
}

const json& require_field(const json& cfg, const char* key) {
  if (!cfg.contains(key)) {
    throw drc::ConfigError(std::string("config is missing required field '") + key + "'");
  }
  return cfg.at(key);
}

drc::LabelScheme scheme_from_config(const json& j) {
  if (j.is_string()) return drc::LabelScheme::by_name(j.get<std::string>());
  if (j.is_object()) {
    std::string name = j.at("name").get<std::string>();
    if (j.contains("labels_file")) {
      return drc::LabelScheme::from_file(name, j.at("labels_file").get<std::string>());
    }
    return drc::LabelScheme::by_name(name);
  }
  throw drc::ConfigError("scheme must be a name or an object with a labels_file");
}

drc::ModelConfig model_from_config(const json& j) {
  drc::ModelConfig c;
  if (j.contains("architecture")) {
    c.architecture = drc::architecture_from_name(j.at("architecture").get<std::string>());
  }
  if (j.contains("pooling")) {
    c.pooling = drc::pooling_from_name(j.at("pooling").get<std::string>());
  }
  if (j.contains("hidden_dim")) c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  if (j.contains("hidden_layers")) c.hidden_layers = j.at("hidden_layers").get<std::size_t>();
  if (j.contains("state_dim")) c.state_dim = j.at("state_dim").get<std::size_t>();
  if (j.contains("word_dim")) c.word_dim = j.at("word_dim").get<std::size_t>();
  if (j.contains("num_labels")) c.num_labels = j.at("num_labels").get<std::size_t>();
  return c;
}

drc::TrainConfig training_from_config(const json& j) {
  drc::TrainConfig c;
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("learning_rate_grid")) {
    c.learning_rate_grid = j.at("learning_rate_grid").get<std::vector<double>>();
  }
  if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<std::size_t>();
  if (j.contains("patience")) c.patience = j.at("patience").get<std::size_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("adagrad_epsilon")) c.adagrad_epsilon = j.at("adagrad_epsilon").get<double>();
  return c;
}

void print_filter_report(const std::string& name, const drc::FilterReport& report) {
  std::printf(
      "%s: kept %zu instances (dropped %zu: %zu by type, %zu partial, %zu unknown sense, "
      "%zu empty)\n",
      name.c_str(), report.kept, report.dropped(), report.dropped_by_type,
      report.dropped_partial, report.dropped_unknown, report.dropped_empty_arg);
  if (!report.rejected_senses.empty()) {
    std::string line = name + ": rejected senses:";
    std::size_t shown = 0;
    for (const auto& [sense, count] : report.rejected_senses) {
      if (shown++ == 5) {
        line += " ...";
        break;
      }
      line += " '" + sense + "' (" + std::to_string(count) + ")";
    }
    std::printf("%s\n", line.c_str());
  }
}

drc::Dataset load_dataset(const std::string& path, const drc::LabelScheme& scheme,
                          const std::string& split, bool need_trees, bool verbose = true) {
  std::vector<drc::RelationInstance> raw = drc::load_conll_json(path, split);
  drc::FilterReport report;
  drc::Dataset ds = drc::filter_for_task(raw, scheme, &report);
  if (verbose) print_filter_report(split.empty() ? path : split, report);
  if (need_trees) {
    std::size_t fallbacks = drc::ensure_trees(ds);
    if (verbose && fallbacks > 0) {
      std::printf("%s: %zu arguments had no parse tree, using right-branching chains\n",
                  (split.empty() ? path : split).c_str(), fallbacks);
    }
  }
  return ds;
}

void write_history(const drc::TrainingHistory& history, const std::string& path) {
  nlohmann::ordered_json j;
  j["epochs"] = nlohmann::ordered_json::array();
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    j["epochs"].push_back(nlohmann::ordered_json{
        {"epoch", e},
        {"train_loss", history.epochs[e].train_loss},
        {"dev_accuracy", history.epochs[e].dev_accuracy}});
  }
  j["best_epoch"] = history.best_epoch;
  j["best_dev_accuracy"] = history.best_dev_accuracy;
  std::ofstream out(path);
  if (!out) throw drc::DataError("cannot write history file: " + path);
  out << j.dump(2) << '\n';
}

struct CommonOverrides {
  std::optional<std::uint64_t> seed;
  std::string scheme;
  std::string embeddings;
  std::string out;
};

int cmd_train(const std::string& config_path, const CommonOverrides& over) {
  json cfg = load_json_file(config_path);
  drc::LabelScheme scheme = over.scheme.empty()
                                ? scheme_from_config(require_field(cfg, "scheme"))
                                : drc::LabelScheme::by_name(over.scheme);
  std::string embeddings_path =
      over.embeddings.empty() ? require_field(cfg, "embeddings").get<std::string>() : over.embeddings;
  std::string out_dir = !over.out.empty()         ? over.out
                        : cfg.contains("out_dir") ? cfg.at("out_dir").get<std::string>()
                                                  : ".";
  drc::ModelConfig mc =
      cfg.contains("model") ? model_from_config(cfg.at("model")) : drc::ModelConfig{};
  drc::TrainConfig tc =
      cfg.contains("training") ? training_from_config(cfg.at("training")) : drc::TrainConfig{};
  if (over.seed) tc.seed = *over.seed;

  drc::WordVectorTable table = drc::load_vectors(embeddings_path);
  std::printf("embeddings: %zu vectors, k=%zu\n", table.size(), table.dim());

  bool need_trees = mc.architecture == drc::Architecture::TreeLstm;
  drc::Dataset train_set =
      load_dataset(require_field(cfg, "train_data").get<std::string>(), scheme, "train", need_trees);
  drc::Dataset dev_set =
      load_dataset(require_field(cfg, "dev_data").get<std::string>(), scheme, "dev", need_trees);

  drc::TrainResult result = drc::train(train_set, dev_set, mc, tc, table);
  std::printf("trained %zu epochs; best epoch %zu, dev accuracy %.4f\n",
              result.history.epochs.size(), result.history.best_epoch,
              result.history.best_dev_accuracy);

  if (cfg.contains("test_data")) {
    drc::Dataset test_set =
        load_dataset(cfg.at("test_data").get<std::string>(), scheme, "test", need_trees);
    drc::PredictionSet preds = drc::predict_dataset(result.model, test_set, table);
    std::printf("test accuracy %.4f\n", drc::accuracy(preds));
  }

  std::filesystem::create_directories(out_dir);
  std::string model_path = (std::filesystem::path(out_dir) / "model.json").string();
  std::string history_path = (std::filesystem::path(out_dir) / "history.json").string();
  drc::save_model(result.model, model_path);
  write_history(result.history, history_path);
  std::printf("model saved to %s\n", model_path.c_str());
  std::printf("history saved to %s\n", history_path.c_str());
  return 0;
}

int run_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& embeddings_path, const std::string& scheme_override,
                 const std::string& out_path, bool print_accuracy) {
  drc::Model model = drc::load_model(model_path);
  if (!scheme_override.empty() && scheme_override != model.scheme.name) {
    throw drc::ConfigError("scheme mismatch: model was trained with '" + model.scheme.name +
                           "' but '" + scheme_override + "' was requested");
  }
  drc::WordVectorTable table = drc::load_vectors(embeddings_path);
  bool need_trees = model.config.architecture == drc::Architecture::TreeLstm;
  drc::Dataset data = load_dataset(data_path, model.scheme, "", need_trees);
  if (data.empty()) throw drc::DataError(data_path + ": no instances left after filtering");

  drc::PredictionSet preds = drc::predict_dataset(model, data, table);
  if (!out_path.empty()) {
    drc::save_predictions(preds, out_path);
    std::printf("wrote %zu predictions to %s\n", preds.size(), out_path.c_str());
  }
  if (print_accuracy) std::printf("accuracy %.4f\n", drc::accuracy(preds));
  return 0;
}

int cmd_grid(const std::string& config_path, const CommonOverrides& over, unsigned jobs) {
  json cfg = load_json_file(config_path);
  drc::LabelScheme scheme = over.scheme.empty()
                                ? scheme_from_config(require_field(cfg, "scheme"))
                                : drc::LabelScheme::by_name(over.scheme);
  std::string out_dir = !over.out.empty()         ? over.out
                        : cfg.contains("out_dir") ? cfg.at("out_dir").get<std::string>()
                                                  : ".";
  drc::TrainConfig tc =
      cfg.contains("training") ? training_from_config(cfg.at("training")) : drc::TrainConfig{};
  if (over.seed) tc.seed = *over.seed;
  if (cfg.contains("jobs") && jobs == 1) jobs = cfg.at("jobs").get<unsigned>();

  const json& grid = require_field(cfg, "grid");
  std::vector<drc::Architecture> architectures;
  for (const auto& a : require_field(grid, "architectures")) {
    architectures.push_back(drc::architecture_from_name(a.get<std::string>()));
  }
  std::vector<drc::Pooling> poolings;
  for (const auto& p : require_field(grid, "poolings")) {
    poolings.push_back(drc::pooling_from_name(p.get<std::string>()));
  }
  std::vector<std::size_t> depths =
      grid.contains("hidden_layers")
          ? grid.at("hidden_layers").get<std::vector<std::size_t>>()
          : std::vector<std::size_t>{1};
  std::vector<double> rates = grid.contains("learning_rates")
                                  ? grid.at("learning_rates").get<std::vector<double>>()
                                  : tc.learning_rate_grid;
  std::size_t hidden_dim =
      grid.contains("hidden_dim") ? grid.at("hidden_dim").get<std::size_t>() : 300;
  std::size_t state_dim =
      grid.contains("state_dim") ? grid.at("state_dim").get<std::size_t>() : 0;
  std::vector<std::string> embedding_paths;
  if (!over.embeddings.empty()) {
    embedding_paths.push_back(over.embeddings);
  } else if (grid.contains("embeddings")) {
    embedding_paths = grid.at("embeddings").get<std::vector<std::string>>();
  } else {
    embedding_paths.push_back(require_field(cfg, "embeddings").get<std::string>());
  }

  bool need_trees = false;
  for (drc::Architecture a : architectures) {
    if (a == drc::Architecture::TreeLstm) need_trees = true;
  }

  std::vector<drc::ExperimentRecord> all_records;
  for (std::size_t t = 0; t < embedding_paths.size(); ++t) {
    drc::WordVectorTable table = drc::load_vectors(embedding_paths[t]);
    std::printf("embeddings %s: %zu vectors, k=%zu\n", embedding_paths[t].c_str(),
                table.size(), table.dim());
    drc::Dataset train_set = load_dataset(require_field(cfg, "train_data").get<std::string>(), scheme,
                                          "train", need_trees, t == 0);
    drc::Dataset dev_set =
        load_dataset(require_field(cfg, "dev_data").get<std::string>(), scheme, "dev", need_trees, t == 0);
    std::optional<drc::Dataset> test_set;
    if (cfg.contains("test_data")) {
      test_set = load_dataset(cfg.at("test_data").get<std::string>(), scheme, "test",
                              need_trees, t == 0);
    }

    std::vector<drc::ModelConfig> configs;
    for (drc::Architecture arch : architectures) {
      for (drc::Pooling pool : poolings) {
        if (arch == drc::Architecture::Feedforward && pool == drc::Pooling::Last) continue;
        for (std::size_t depth : depths) {
          drc::ModelConfig c;
          c.architecture = arch;
          c.pooling = pool;
          c.hidden_dim = hidden_dim;
          c.hidden_layers = depth;
          c.state_dim = state_dim;
          configs.push_back(c);
        }
      }
    }
    drc::TrainConfig cell_base = tc;
    cell_base.seed = drc::derive_seed(tc.seed, 7700 + t);
    std::vector<drc::ExperimentRecord> records =
        drc::grid_search(train_set, dev_set, test_set ? &*test_set : nullptr, configs, rates,
                         cell_base, table, jobs);
    all_records.insert(all_records.end(), records.begin(), records.end());
  }

  std::filesystem::create_directories(out_dir);
  std::string records_path = (std::filesystem::path(out_dir) / "records.ndjson").string();
  std::string report_path = (std::filesystem::path(out_dir) / "report.txt").string();
  drc::save_experiment_records(all_records, records_path);
  std::string report = drc::render_experiment_table(all_records);
  {
    std::ofstream out(report_path);
    if (!out) throw drc::DataError("cannot write report file: " + report_path);
    out << report;
  }
  std::fputs(report.c_str(), stdout);
  if (const drc::ExperimentRecord* best = drc::best_record(all_records)) {
    std::printf("best cell: %s k=%zu %s %zu hidden layer(s) lr=%g dev=%.4f",
                drc::architecture_name(best->config.architecture), best->config.word_dim,
                drc::pooling_name(best->config.pooling), best->config.hidden_layers,
                best->learning_rate, best->dev_accuracy);
    if (best->test_accuracy >= 0) std::printf(" test=%.4f", best->test_accuracy);
    std::printf("\n");
  }
  std::printf("records saved to %s\n", records_path.c_str());
  return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, std::size_t resamples,
                std::uint64_t seed) {
  drc::PredictionSet a = drc::load_predictions(a_path);
  drc::PredictionSet b = drc::load_predictions(b_path);
  std::vector<std::pair<std::string, double>> rows = {
      {"a: " + a_path, drc::accuracy(a)},
      {"b: " + b_path, drc::accuracy(b)},
  };
  std::fputs(drc::render_comparison_table(rows).c_str(), stdout);
  double p = drc::bootstrap_test(a, b, resamples, seed);
  std::printf("p-value %.4f (one-sided paired bootstrap, %zu resamples, tests a > b)\n", p,
              resamples);
  return 0;
}

int cmd_report(const std::string& records_path, const std::string& out_path) {
  std::vector<drc::ExperimentRecord> records = drc::load_experiment_records(records_path);
  if (records.empty()) throw drc::DataError(records_path + ": no records");
  std::string report = drc::render_experiment_table(records);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw drc::DataError("cannot write report file: " + out_path);
    out << report;
    std::printf("report saved to %s\n", out_path.c_str());
  } else {
    std::fputs(report.c_str(), stdout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"implicit discourse relation classifier"};
  app.require_subcommand(1);

  CommonOverrides over;
  std::string config_path, model_path, data_path, out_path, records_path;
  std::string a_path, b_path, embeddings_path, scheme_name;
  unsigned jobs = 1;
  std::size_t resamples = 10000;
  std::uint64_t compare_seed = 1;
  std::uint64_t seed_value = 0;
  bool seed_given = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed_value, "override the run seed")
        ->each([&](const std::string&) { seed_given = true; });
    cmd->add_option("--scheme", over.scheme, "override the label scheme");
    cmd->add_option("--embeddings", over.embeddings, "override the embeddings path");
    cmd->add_option("--out", over.out, "override the output directory");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "JSON run config")->required();
  add_common(train_cmd);

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a saved model");
  eval_cmd->add_option("--model", model_path, "model file")->required();
  eval_cmd->add_option("--data", data_path, "relation JSON file")->required();
  eval_cmd->add_option("--embeddings", embeddings_path, "embedding file")->required();
  eval_cmd->add_option("--scheme", scheme_name, "expected label scheme");
  eval_cmd->add_option("--out", out_path, "predictions output (ndjson)");

  CLI::App* predict_cmd = app.add_subcommand("predict", "write predictions for a dataset");
  predict_cmd->add_option("--model", model_path, "model file")->required();
  predict_cmd->add_option("--data", data_path, "relation JSON file")->required();
  predict_cmd->add_option("--embeddings", embeddings_path, "embedding file")->required();
  predict_cmd->add_option("--out", out_path, "predictions output (ndjson)")->required();

  CLI::App* grid_cmd = app.add_subcommand("grid", "run a configuration grid search");
  grid_cmd->add_option("--config", config_path, "JSON grid config")->required();
  grid_cmd->add_option("--jobs", jobs, "parallel training jobs");
  add_common(grid_cmd);

  CLI::App* compare_cmd =
      app.add_subcommand("compare", "paired bootstrap test between two prediction files");
  compare_cmd->add_option("--a", a_path, "predictions of system a")->required();
  compare_cmd->add_option("--b", b_path, "predictions of system b")->required();
  compare_cmd->add_option("--resamples", resamples, "bootstrap resamples");
  compare_cmd->add_option("--seed", compare_seed, "resampling seed");

  CLI::App* report_cmd = app.add_subcommand("report", "render a records file as a table");
  report_cmd->add_option("--records", records_path, "records ndjson file")->required();
  report_cmd->add_option("--out", out_path, "write the table to a file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (seed_given) over.seed = seed_value;

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, over);
    if (eval_cmd->parsed()) {
      return run_evaluate(model_path, data_path, embeddings_path, scheme_name,
                          out_path.empty() ? "predictions.ndjson" : out_path, true);
    }
    if (predict_cmd->parsed()) {
      return run_evaluate(model_path, data_path, embeddings_path, "", out_path, false);
    }
    if (grid_cmd->parsed()) return cmd_grid(config_path, over, jobs);
    if (compare_cmd->parsed()) return cmd_compare(a_path, b_path, resamples, compare_seed);
    if (report_cmd->parsed()) return cmd_report(records_path, out_path);
  } catch (const drc::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const drc::NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const drc::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const drc::DimensionError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
