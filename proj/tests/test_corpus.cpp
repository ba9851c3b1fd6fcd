#include <doctest.h>

#include <string>
#include <vector>

#include "drc/corpus.hpp"

#include "test_util.hpp"

using namespace drc;
using drc::test::temp_path;
using drc::test::write_file;

namespace {

RelationInstance implicit_instance(std::vector<std::string> senses,
                                   std::vector<std::string> a1 = {"a", "b"},
                                   std::vector<std::string> a2 = {"c"}) {
  RelationInstance r;
  r.type = RelationType::Implicit;
  r.arg1_tokens = std::move(a1);
  r.arg2_tokens = std::move(a2);
  r.senses = std::move(senses);
  return r;
}

}  // namespace

TEST_CASE("binarize: flat and nested bracketings") {
  SUBCASE("binary node") {
    TreePtr t = binarize("(X a b)");
    CHECK_FALSE(t->leaf());
    CHECK(t->left->token == "a");
    CHECK(t->right->token == "b");
  }
  SUBCASE("ternary node folds rightward") {
    TreePtr t = binarize("(X a b c)");
    CHECK(t->left->token == "a");
    CHECK_FALSE(t->right->leaf());
    CHECK(t->right->left->token == "b");
    CHECK(t->right->right->token == "c");
  }
  SUBCASE("unary chains collapse") {
    TreePtr t = binarize("(X (Y a))");
    CHECK(t->leaf());
    CHECK(t->token == "a");
  }
  SUBCASE("PTB-style parse with categories and empty root label") {
    TreePtr t = binarize("( (S (NP (DT The) (NN cat)) (VP sleeps)) )");
    std::vector<std::string> leaves = tree_leaves(t);
    REQUIRE(leaves.size() == 3);
    CHECK(leaves[0] == "The");
    CHECK(leaves[1] == "cat");
    CHECK(leaves[2] == "sleeps");
    // every internal node is binary
    auto check_binary = [](auto&& self, const TreePtr& n) -> void {
      if (n->leaf()) return;
      REQUIRE(n->left);
      REQUIRE(n->right);
      self(self, n->left);
      self(self, n->right);
    };
    check_binary(check_binary, t);
  }
  SUBCASE("unbalanced brackets") {
    CHECK_THROWS_AS(binarize("(X a (Y b)"), DataError);
    CHECK_THROWS_AS(binarize("(X a)) extra"), DataError);
  }
  SUBCASE("yield must match the argument tokens") {
    std::vector<std::string> tokens = {"a", "b"};
    CHECK_NOTHROW(binarize_for("(X a b)", tokens));
    CHECK_THROWS_AS(binarize_for("(X a b c)", tokens), DataError);
    std::vector<std::string> other = {"a", "z"};
    CHECK_THROWS_AS(binarize_for("(X a b)", other), DataError);
  }
}

TEST_CASE("binarize preserves the leaf sequence on random trees") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t n = 1 + rng.below(9);
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < n; ++i) tokens.push_back("w" + std::to_string(i));
    // n-ary bracketing with random nesting
    std::string text = "(S";
    for (const std::string& t : tokens) {
      if (rng.below(2)) {
        text += " (NP " + t + ")";
      } else {
        text += " " + t;
      }
    }
    text += ")";
    std::vector<std::string> leaves = tree_leaves(binarize(text));
    CHECK(leaves == tokens);
  }
}

TEST_CASE("bracketed tree files load one tree per line") {
  std::string path = temp_path("trees.txt");
  write_file(path, "(S (NP a) (VP b c))\n\n(X q)\n");
  std::vector<TreePtr> trees = load_bracketed_trees(path);
  REQUIRE(trees.size() == 2);
  CHECK(tree_leaves(trees[0]) == std::vector<std::string>{"a", "b", "c"});
  CHECK(trees[1]->leaf());

  write_file(path, "(S (NP a)\n");
  CHECK_THROWS_WITH_AS(load_bracketed_trees(path), doctest::Contains(":1"), DataError);
}

TEST_CASE("right_chain fallback") {
  std::vector<std::string> tokens = {"x", "y", "z"};
  TreePtr t = right_chain(tokens);
  CHECK(tree_leaves(t) == tokens);
  CHECK(t->left->leaf());
  CHECK_FALSE(t->right->leaf());
}

TEST_CASE("load_conll_json: field extraction") {
  std::string path = temp_path("relations.json");
  write_file(path,
             R"json({"Arg1":{"Words":["a","b"]},"Arg2":{"Words":["c"]},"Sense":["Expansion.Conjunction"],"Type":"Implicit","DocID":"d1","ID":7})json"
             "\n"
             R"json({"Arg1":{"RawText":"p q r"},"Arg2":{"Words":["s"]},"Sense":["Comparison.Contrast","Expansion.Conjunction"],"Type":"Explicit","ID":8})json"
             "\n");
  std::vector<RelationInstance> rel = load_conll_json(path, "train");
  REQUIRE(rel.size() == 2);
  CHECK(rel[0].arg1_tokens == std::vector<std::string>{"a", "b"});
  CHECK(rel[0].arg2_tokens == std::vector<std::string>{"c"});
  CHECK(rel[0].senses == std::vector<std::string>{"Expansion.Conjunction"});
  CHECK(rel[0].type == RelationType::Implicit);
  CHECK(rel[0].doc_id == "d1");
  CHECK(rel[0].id == "7");
  CHECK(rel[0].split == "train");
  // RawText fallback splits on whitespace, sense order preserved
  CHECK(rel[1].arg1_tokens == std::vector<std::string>{"p", "q", "r"});
  CHECK(rel[1].senses[0] == "Comparison.Contrast");
  CHECK(rel[1].senses[1] == "Expansion.Conjunction");
  CHECK(rel[1].type == RelationType::Explicit);
}

TEST_CASE("load_conll_json: embedded parse trees are binarized") {
  std::string path = temp_path("relations_trees.json");
  write_file(path,
             R"json({"Arg1":{"Words":["a","b"],"ParseTree":"(S (NP a) (VP b))"},"Arg2":{"Words":["c"]},"Arg2Tree":"(X c)","Sense":["Expansion.Conjunction"],"Type":"Implicit"})json"
             "\n");
  std::vector<RelationInstance> rel = load_conll_json(path);
  REQUIRE(rel.size() == 1);
  REQUIRE(rel[0].arg1_tree);
  CHECK(tree_leaves(rel[0].arg1_tree) == rel[0].arg1_tokens);
  REQUIRE(rel[0].arg2_tree);
  CHECK(rel[0].arg2_tree->leaf());
}

TEST_CASE("load_conll_json: offset token lists fall back to RawText") {
  // the shared-task distribution carries character-offset tuples in
  // TokenList; tokens then come from the space-joined RawText
  std::string path = temp_path("relations_offsets.json");
  write_file(path,
             R"json({"Arg1":{"RawText":"it was n't","TokenList":[[9,11,2,0,2],[12,15,3,0,3],[16,19,4,0,4]]},"Arg2":{"RawText":"so be it","TokenList":[[24,26,6,1,0],[27,29,7,1,1],[30,32,8,1,2]]},"Sense":["Comparison.Contrast"],"Type":"Implicit","ID":12})json"
             "\n");
  std::vector<RelationInstance> rel = load_conll_json(path);
  REQUIRE(rel.size() == 1);
  CHECK(rel[0].arg1_tokens == std::vector<std::string>{"it", "was", "n't"});
  CHECK(rel[0].arg2_tokens == std::vector<std::string>{"so", "be", "it"});
}

TEST_CASE("load_conll_json: errors name the line") {
  std::string path = temp_path("bad.json");
  write_file(path, "{\"Arg1\":{\"Words\":[\"a\"]},\"Arg2\":{\"Words\":[\"b\"]},\"Sense\":[\"EntRel\"],\"Type\":\"EntRel\"}\nnot json at all\n");
  CHECK_THROWS_WITH_AS(load_conll_json(path), doctest::Contains(":2"), DataError);

  std::string missing = temp_path("missing_field.json");
  write_file(missing,
             R"json({"Arg1":{"Words":["a"]},"Arg2":{"Words":["b"]},"Type":"Implicit"})json"
             "\n");
  CHECK_THROWS_WITH_AS(load_conll_json(missing), doctest::Contains("Sense"), DataError);
}

TEST_CASE("filter_for_task: PDTB level-2 protocol") {
  LabelScheme scheme = LabelScheme::pdtb_level2();
  REQUIRE(scheme.labels.size() == 11);

  std::vector<RelationInstance> raw;
  raw.push_back(implicit_instance({"Comparison.Contrast", "Expansion.Conjunction"}));
  raw.push_back(implicit_instance({"Comparison"}));  // partial
  raw.push_back(implicit_instance({"Contingency.Cause.Reason"}));
  RelationInstance expl = implicit_instance({"Expansion.Conjunction"});
  expl.type = RelationType::Explicit;
  raw.push_back(expl);
  raw.push_back(implicit_instance({"Bogus.Sense"}));

  FilterReport report;
  Dataset ds = filter_for_task(raw, scheme, &report);
  REQUIRE(ds.size() == 2);
  // first-label rule
  CHECK(ds.scheme.labels[ds.instances[0].label] == "Comparison.Contrast");
  CHECK(ds.instances[0].gold_labels.size() == 1);
  // level-2 truncation
  CHECK(ds.scheme.labels[ds.instances[1].label] == "Contingency.Cause");
  CHECK(report.kept == 2);
  CHECK(report.dropped_partial == 1);
  CHECK(report.dropped_by_type == 1);
  CHECK(report.dropped_unknown == 1);
  CHECK(report.rejected_senses.at("Bogus.Sense") == 1);

  // every retained label is a member of the scheme
  for (const LabeledInstance& li : ds.instances) {
    CHECK(li.label >= 0);
    CHECK(li.label < static_cast<int>(scheme.labels.size()));
  }
}

TEST_CASE("filter_for_task is idempotent") {
  std::vector<RelationInstance> raw;
  raw.push_back(implicit_instance({"Comparison.Contrast"}));
  raw.push_back(implicit_instance({"Contingency.Cause.Reason"}));
  raw.push_back(implicit_instance({"Temporal.Asynchronous", "Comparison.Contrast"}));
  Dataset once = filter_for_task(raw, LabelScheme::pdtb_level2());
  Dataset twice = filter_for_task(once);
  REQUIRE(twice.size() == once.size());
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(twice.instances[i].label == once.instances[i].label);
    CHECK(twice.instances[i].gold_labels == once.instances[i].gold_labels);
    CHECK(twice.instances[i].arg1_tokens == once.instances[i].arg1_tokens);
  }
}

TEST_CASE("filter_for_task: CoNLL 15-sense setting") {
  LabelScheme scheme = LabelScheme::conll15();
  REQUIRE(scheme.labels.size() == 15);

  std::vector<RelationInstance> raw;
  RelationInstance entrel = implicit_instance({});
  entrel.type = RelationType::EntRel;
  entrel.senses = {"EntRel"};
  raw.push_back(entrel);
  RelationInstance altlex = implicit_instance({"Contingency.Cause.Reason"});
  altlex.type = RelationType::AltLex;
  raw.push_back(altlex);
  raw.push_back(implicit_instance({"Expansion.Restatement", "Expansion.Conjunction"}));
  RelationInstance expl = implicit_instance({"Comparison.Contrast"});
  expl.type = RelationType::Explicit;
  raw.push_back(expl);

  Dataset ds = filter_for_task(raw, scheme);
  REQUIRE(ds.size() == 3);
  CHECK(ds.scheme.labels[ds.instances[0].label] == "EntRel");
  CHECK(ds.scheme.labels[ds.instances[1].label] == "Contingency.Cause.Reason");
  CHECK(ds.scheme.labels[ds.instances[2].label] == "Expansion.Restatement");
  // multi-sense gold kept for evaluation
  CHECK(ds.instances[2].gold_labels.size() == 2);
}

TEST_CASE("filter_for_task: CDTB 10-sense setting") {
  LabelScheme scheme = LabelScheme::cdtb10();
  REQUIRE(scheme.labels.size() == 10);
  std::vector<RelationInstance> raw;
  raw.push_back(implicit_instance({"Causation"}));
  RelationInstance entrel = implicit_instance({});
  entrel.type = RelationType::EntRel;
  entrel.senses = {"EntRel"};
  raw.push_back(entrel);
  Dataset ds = filter_for_task(raw, scheme);
  REQUIRE(ds.size() == 2);
  CHECK(ds.scheme.labels[ds.instances[0].label] == "Causation");
  CHECK(ds.scheme.labels[ds.instances[1].label] == "EntRel");
}

TEST_CASE("label scheme from file") {
  std::string path = temp_path("labels.txt");
  write_file(path, "# toy scheme\nAlpha\nBeta\nGamma\n");
  LabelScheme scheme = LabelScheme::from_file("toy", path);
  CHECK(scheme.labels.size() == 3);
  CHECK(scheme.index_of("Beta") == 1);
  CHECK(scheme.index_of("Delta") == -1);

  std::string dup = temp_path("dup_labels.txt");
  write_file(dup, "A\nB\nA\n");
  CHECK_THROWS_AS(LabelScheme::from_file("bad", dup), DataError);
}

TEST_CASE("label_distribution counts training targets") {
  LabelScheme scheme = LabelScheme::pdtb_level2();
  SUBCASE("empty dataset gives all-zero counts") {
    Dataset empty{scheme, {}};
    std::vector<std::size_t> counts = label_distribution(empty);
    REQUIRE(counts.size() == 11);
    for (std::size_t c : counts) CHECK(c == 0);
  }
  SUBCASE("double-labeled instances count once") {
    std::vector<RelationInstance> raw;
    raw.push_back(implicit_instance({"Contingency.Cause.Reason"}));
    raw.push_back(implicit_instance({"Contingency.Cause.Result"}));
    raw.push_back(implicit_instance({"Comparison.Contrast", "Contingency.Cause"}));
    Dataset ds = filter_for_task(raw, scheme);
    std::vector<std::size_t> counts = label_distribution(ds);
    CHECK(counts[static_cast<std::size_t>(scheme.index_of("Contingency.Cause"))] == 2);
    CHECK(counts[static_cast<std::size_t>(scheme.index_of("Comparison.Contrast"))] == 1);
    std::size_t total = 0;
    for (std::size_t c : counts) total += c;
    CHECK(total == ds.size());
  }
}

TEST_CASE("binarize survives arbitrary bracket soup") {
  Rng rng(401);
  const char alphabet[] = "(()) ab";
  std::size_t parsed = 0, rejected = 0;
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    std::size_t len = 1 + rng.below(24);
    for (std::size_t i = 0; i < len; ++i) text += alphabet[rng.below(sizeof(alphabet) - 1)];
    try {
      TreePtr t = binarize(text);
      REQUIRE(t);
      CHECK(!tree_leaves(t).empty());
      ++parsed;
    } catch (const DataError&) {
      ++rejected;
    }
  }
  CHECK(parsed + rejected == 300);
  CHECK(rejected > 0);  // garbage is rejected, not crashed on
}

TEST_CASE("bundled toy corpus follows the task protocol") {
  std::string dir = std::string(DRC_TEST_DATA_DIR) + "/toy";
  std::vector<RelationInstance> raw = load_conll_json(dir + "/train.json", "train");
  FilterReport report;
  Dataset ds = filter_for_task(raw, LabelScheme::pdtb_level2(), &report);
  CHECK(ds.size() == 160);
  CHECK(report.dropped_by_type == 1);   // one Explicit relation
  CHECK(report.dropped_partial == 1);   // one label without a second level
  CHECK(report.dropped_unknown == 0);

  // bundled parses cover every argument
  for (const LabeledInstance& li : ds.instances) {
    REQUIRE(li.arg1_tree);
    REQUIRE(li.arg2_tree);
    CHECK(tree_leaves(li.arg1_tree) == li.arg1_tokens);
    CHECK(tree_leaves(li.arg2_tree) == li.arg2_tokens);
  }

  // four senses in even rotation
  std::vector<std::size_t> counts = label_distribution(ds);
  std::size_t total = 0, present = 0;
  for (std::size_t c : counts) {
    total += c;
    if (c > 0) ++present;
  }
  CHECK(total == 160);
  CHECK(present == 4);

  // re-filtering the filtered data changes nothing
  Dataset again = filter_for_task(ds);
  REQUIRE(again.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(again.instances[i].label == ds.instances[i].label);
  }
}

TEST_CASE("ensure_trees reports fallback count") {
  std::vector<RelationInstance> raw;
  RelationInstance with_tree = implicit_instance({"Comparison.Contrast"});
  with_tree.arg1_tree = binarize_for("(X a b)", with_tree.arg1_tokens);
  raw.push_back(with_tree);
  raw.push_back(implicit_instance({"Contingency.Cause"}));
  Dataset ds = filter_for_task(raw, LabelScheme::pdtb_level2());
  std::size_t fallbacks = ensure_trees(ds);
  CHECK(fallbacks == 3);  // one missing arg2 tree + two missing on the second instance
  for (const LabeledInstance& li : ds.instances) {
    REQUIRE(li.arg1_tree);
    REQUIRE(li.arg2_tree);
    CHECK(tree_leaves(li.arg1_tree) == li.arg1_tokens);
    CHECK(tree_leaves(li.arg2_tree) == li.arg2_tokens);
  }
}
