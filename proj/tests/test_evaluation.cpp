#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "drc/evaluation.hpp"

#include "test_util.hpp"

using namespace drc;

namespace {

PredictionSet from_flags(const std::vector<int>& correct, const std::string& prefix = "i") {
  PredictionSet out;
  for (std::size_t i = 0; i < correct.size(); ++i) {
    Prediction p;
    p.id = prefix + std::to_string(i);
    p.gold = {"G"};
    p.predicted = correct[i] ? "G" : "X";
    out.items.push_back(std::move(p));
  }
  return out;
}

// Exhaustive enumeration over all n^n equiprobable resamples.
double exact_bootstrap_p(const std::vector<int>& ca, const std::vector<int>& cb) {
  const std::size_t n = ca.size();
  std::vector<std::size_t> idx(n, 0);
  std::size_t total = 0, not_ahead = 0;
  while (true) {
    int sa = 0, sb = 0;
    for (std::size_t i : idx) {
      sa += ca[i];
      sb += cb[i];
    }
    ++total;
    if (sa <= sb) ++not_ahead;
    std::size_t d = 0;
    while (d < n && ++idx[d] == n) {
      idx[d] = 0;
      ++d;
    }
    if (d == n) break;
  }
  return static_cast<double>(not_ahead) / static_cast<double>(total);
}

Dataset tiny_dataset(const std::vector<int>& labels) {
  LabelScheme scheme{"tiny", {"L0", "L1", "L2"}, SenseRule::AsProvided};
  Dataset ds{scheme, {}};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    LabeledInstance inst;
    inst.id = "d" + std::to_string(i);
    inst.arg1_tokens = {"a"};
    inst.arg2_tokens = {"b"};
    inst.label = labels[i];
    inst.gold_labels = {labels[i]};
    ds.instances.push_back(std::move(inst));
  }
  return ds;
}

}  // namespace

TEST_CASE("accuracy") {
  CHECK(accuracy(from_flags({1, 1, 1})) == 1.0);
  CHECK(accuracy(from_flags({1, 0, 1, 0})) == 0.5);
  PredictionSet empty;
  CHECK_THROWS_AS(accuracy(empty), DataError);
}

TEST_CASE("multi-sense gold counts any match as correct") {
  Prediction p;
  p.id = "x";
  p.gold = {"A", "B"};
  p.predicted = "B";
  CHECK(p.correct());
  p.predicted = "C";
  CHECK_FALSE(p.correct());
}

TEST_CASE("majority baseline") {
  SUBCASE("predicts the most frequent training label") {
    Dataset train_set = tiny_dataset({1, 1, 1, 0, 2});
    Dataset eval_set = tiny_dataset({0, 1, 1, 2});
    PredictionSet preds = majority_baseline(train_set, eval_set);
    REQUIRE(preds.size() == 4);
    for (const Prediction& p : preds.items) CHECK(p.predicted == "L1");
    // accuracy equals the majority label's share of the eval set, exactly
    CHECK(accuracy(preds) == 0.5);
  }
  SUBCASE("frequency ties break toward the lowest label index") {
    Dataset train_set = tiny_dataset({2, 1, 2, 1});
    Dataset eval_set = tiny_dataset({1});
    PredictionSet preds = majority_baseline(train_set, eval_set);
    CHECK(preds.items[0].predicted == "L1");
  }
  SUBCASE("single-label training set is perfect on same-label eval") {
    Dataset train_set = tiny_dataset({0, 0, 0});
    Dataset eval_set = tiny_dataset({0, 0});
    CHECK(accuracy(majority_baseline(train_set, eval_set)) == 1.0);
  }
}

TEST_CASE("bootstrap test") {
  SUBCASE("identical prediction sets give p of 1") {
    PredictionSet a = from_flags({1, 0, 1, 1, 0});
    CHECK(bootstrap_test(a, a, 2000, 42) == 1.0);
  }
  SUBCASE("dominant system a gives p of 0") {
    PredictionSet a = from_flags({1, 1, 1, 1});
    PredictionSet b = from_flags({0, 0, 0, 0});
    CHECK(bootstrap_test(a, b, 10000, 42) == 0.0);
  }
  SUBCASE("three-instance toy matches exhaustive enumeration") {
    // a correct on instances 0 and 1, b correct on instance 0 only
    std::vector<int> ca = {1, 1, 0};
    std::vector<int> cb = {1, 0, 0};
    double exact = exact_bootstrap_p(ca, cb);
    CHECK(exact == doctest::Approx(8.0 / 27.0).epsilon(1e-12));
    double sampled = bootstrap_test(from_flags(ca), from_flags(cb), 10000, 2027);
    CHECK(std::fabs(sampled - exact) < 0.01);
  }
  SUBCASE("a never beats itself") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<int> flags(5 + rng.below(10));
      for (int& f : flags) f = rng.below(2) ? 1 : 0;
      PredictionSet a = from_flags(flags);
      CHECK(bootstrap_test(a, a, 500, trial) >= 0.5);
    }
  }
  SUBCASE("mismatched ids are rejected") {
    PredictionSet a = from_flags({1, 0});
    PredictionSet b = from_flags({1, 0}, "other");
    CHECK_THROWS_AS(bootstrap_test(a, b, 100, 1), DataError);
    PredictionSet c = from_flags({1});
    CHECK_THROWS_AS(bootstrap_test(a, c, 100, 1), DataError);
  }
}

TEST_CASE("prediction sets round-trip through ndjson") {
  PredictionSet preds;
  Prediction p1{"a:1", {"Comparison.Contrast"}, "Contingency.Cause"};
  Prediction p2{"a:2", {"EntRel", "Expansion.Conjunction"}, "EntRel"};
  preds.items = {p1, p2};
  std::string path = drc::test::temp_path("preds.ndjson");
  save_predictions(preds, path);
  PredictionSet loaded = load_predictions(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.items[0].id == "a:1");
  CHECK(loaded.items[0].gold == p1.gold);
  CHECK(loaded.items[1].predicted == "EntRel");
  CHECK(accuracy(loaded) == 0.5);

  // duplicate ids are rejected on load
  preds.items.push_back(p1);
  save_predictions(preds, path);
  CHECK_THROWS_AS(load_predictions(path), DataError);
}

TEST_CASE("comparison table renders system rows with the best starred") {
  std::vector<std::pair<std::string, double>> rows = {
      {"Most frequent tag baseline", 0.2571},
      {"bag-of-words sum", 0.3956},
      {"sequential last", 0.3838},
  };
  std::string table = render_comparison_table(rows);
  CHECK(table.find("Most frequent tag baseline") != std::string::npos);
  CHECK(table.find("25.71") != std::string::npos);
  CHECK(table.find("39.56 *") != std::string::npos);
  CHECK(table.find("38.38\n") != std::string::npos);
}

TEST_CASE("fold assignment is a partition with balanced sizes") {
  SUBCASE("seven instances over seven folds") {
    std::vector<std::size_t> folds = make_folds(7, 7, 99);
    std::vector<int> seen(7, 0);
    for (std::size_t f : folds) seen[f]++;
    for (int s : seen) CHECK(s == 1);
  }
  SUBCASE("sizes differ by at most one") {
    std::vector<std::size_t> folds = make_folds(23, 7, 99);
    std::vector<int> sizes(7, 0);
    for (std::size_t f : folds) {
      REQUIRE(f < 7);
      sizes[f]++;
    }
    int lo = sizes[0], hi = sizes[0];
    for (int s : sizes) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    CHECK(hi - lo <= 1);
  }
  SUBCASE("deterministic given the seed") {
    CHECK(make_folds(50, 7, 1) == make_folds(50, 7, 1));
    CHECK(make_folds(50, 7, 1) != make_folds(50, 7, 2));
  }
  SUBCASE("fewer instances than folds") {
    CHECK_THROWS_AS(make_folds(5, 7, 1), DataError);
  }
}

TEST_CASE("cross-validation with the majority classifier matches per-fold recomputation") {
  Dataset data = tiny_dataset({0, 1, 1, 2, 1, 0, 2, 1, 1, 0, 2, 1, 0, 1});
  const std::size_t folds = 7;
  const std::uint64_t seed = 431;

  CrossValidationResult cv = cross_validate_with(
      data, folds, seed,
      [&](const Dataset& train_part, const Dataset&, const Dataset& test_part,
          std::size_t) { return accuracy(majority_baseline(train_part, test_part)); });

  // direct recomputation from the fold assignment
  std::vector<std::size_t> fold_of = make_folds(data.size(), folds, seed);
  for (std::size_t held = 0; held < folds; ++held) {
    std::size_t dev_fold = (held + 1) % folds;
    Dataset train_part{data.scheme, {}};
    Dataset test_part{data.scheme, {}};
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (fold_of[i] == held) {
        test_part.instances.push_back(data.instances[i]);
      } else if (fold_of[i] != dev_fold) {
        train_part.instances.push_back(data.instances[i]);
      }
    }
    double expect = accuracy(majority_baseline(train_part, test_part));
    CHECK(cv.fold_accuracy[held] == expect);
  }
  double mean = 0.0;
  for (double a : cv.fold_accuracy) mean += a;
  CHECK(cv.mean_accuracy == doctest::Approx(mean / folds).epsilon(1e-12));
}

TEST_CASE("neural cross-validation runs each fold once") {
  drc::test::SyntheticTask task = drc::test::make_marker_task(56, 0, 3);
  ModelConfig mc;
  mc.architecture = Architecture::Feedforward;
  mc.pooling = Pooling::Sum;
  mc.hidden_dim = 6;
  mc.hidden_layers = 1;
  TrainConfig tc;
  tc.learning_rate = 0.1;
  tc.max_epochs = 4;
  tc.patience = 4;
  tc.seed = 17;

  CrossValidationResult cv = cross_validate(task.train, mc, tc, task.table, 7);
  REQUIRE(cv.fold_accuracy.size() == 7);
  for (double a : cv.fold_accuracy) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  // deterministic
  CrossValidationResult again = cross_validate(task.train, mc, tc, task.table, 7);
  for (std::size_t f = 0; f < 7; ++f) CHECK(cv.fold_accuracy[f] == again.fold_accuracy[f]);
}
