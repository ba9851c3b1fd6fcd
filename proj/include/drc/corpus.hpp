#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "drc/errors.hpp"

namespace drc {

// ---------------------------------------------------------------------------
// Binary trees over argument tokens (category labels already stripped).
// ---------------------------------------------------------------------------

struct TreeNode;
using TreePtr = std::shared_ptr<const TreeNode>;

struct TreeNode {
  std::string token;  // leaves only
  TreePtr left;
  TreePtr right;
  bool leaf() const { return !left; }
};

inline TreePtr make_leaf(std::string token) {
  auto n = std::make_shared<TreeNode>();
  n->token = std::move(token);
  return n;
}

inline TreePtr make_node(TreePtr left, TreePtr right) {
  auto n = std::make_shared<TreeNode>();
  n->left = std::move(left);
  n->right = std::move(right);
  return n;
}

inline void collect_leaves(const TreePtr& t, std::vector<std::string>& out) {
  if (!t) return;
  if (t->leaf()) {
    out.push_back(t->token);
    return;
  }
  collect_leaves(t->left, out);
  collect_leaves(t->right, out);
}

inline std::vector<std::string> tree_leaves(const TreePtr& t) {
  std::vector<std::string> out;
  collect_leaves(t, out);
  return out;
}

inline std::string tree_to_string(const TreePtr& t) {
  if (!t) return "";
  if (t->leaf()) return t->token;
  return "(" + tree_to_string(t->left) + " " + tree_to_string(t->right) + ")";
}

// Right-branching chain over tokens; the fallback when an argument has no
// gold parse but a tree model is requested.
inline TreePtr right_chain(std::span<const std::string> tokens) {
  if (tokens.empty()) throw DataError("right_chain: no tokens");
  TreePtr t = make_leaf(tokens.back());
  for (std::size_t i = tokens.size() - 1; i-- > 0;) {
    t = make_node(make_leaf(tokens[i]), t);
  }
  return t;
}

namespace detail {

struct RawParseNode {
  std::string label;
  std::string token;
  bool is_token = false;
  std::vector<RawParseNode> children;
};

inline void skip_spaces(const std::string& s, std::size_t& i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r')) ++i;
}

inline RawParseNode parse_bracketed(const std::string& s, std::size_t& i) {
  skip_spaces(s, i);
  if (i >= s.size()) throw DataError("bracketed tree: unexpected end of input");
  RawParseNode node;
  if (s[i] != '(') {
    // bare token
    std::size_t start = i;
    while (i < s.size() && s[i] != '(' && s[i] != ')' && s[i] != ' ' && s[i] != '\t' &&
           s[i] != '\n' && s[i] != '\r')
      ++i;
    node.is_token = true;
    node.token = s.substr(start, i - start);
    return node;
  }
  ++i;  // consume '('
  skip_spaces(s, i);
  std::size_t start = i;
  while (i < s.size() && s[i] != '(' && s[i] != ')' && s[i] != ' ' && s[i] != '\t' &&
         s[i] != '\n' && s[i] != '\r')
    ++i;
  node.label = s.substr(start, i - start);
  while (true) {
    skip_spaces(s, i);
    if (i >= s.size()) throw DataError("bracketed tree: unbalanced brackets");
    if (s[i] == ')') {
      ++i;
      break;
    }
    node.children.push_back(parse_bracketed(s, i));
  }
  return node;
}

inline TreePtr lower_parse_node(const RawParseNode& n) {
  if (n.is_token) return make_leaf(n.token);
  if (n.children.empty()) {
    // "(NP)" style node with no yield
    throw DataError("bracketed tree: constituent '" + n.label + "' has no children");
  }
  std::vector<TreePtr> kids;
  kids.reserve(n.children.size());
  for (const RawParseNode& c : n.children) kids.push_back(lower_parse_node(c));
  if (kids.size() == 1) return kids[0];  // unary chain collapses
  TreePtr t = kids.back();
  for (std::size_t i = kids.size() - 1; i-- > 0;) {
    t = make_node(kids[i], t);  // fold n-ary children rightward
  }
  return t;
}

}  // namespace detail

// Parses a PTB-style bracketed constituency tree, strips category labels,
// collapses unary chains, and right-binarizes n-ary nodes.
inline TreePtr binarize(const std::string& bracketed) {
  std::size_t i = 0;
  detail::RawParseNode root = detail::parse_bracketed(bracketed, i);
  detail::skip_spaces(bracketed, i);
  if (i != bracketed.size()) {
    throw DataError("bracketed tree: trailing content after root constituent");
  }
  return detail::lower_parse_node(root);
}

// binarize() plus a check that the leaf sequence matches the argument tokens.
inline TreePtr binarize_for(const std::string& bracketed,
                            std::span<const std::string> tokens) {
  TreePtr t = binarize(bracketed);
  std::vector<std::string> leaves = tree_leaves(t);
  if (leaves.size() != tokens.size() ||
      !std::equal(leaves.begin(), leaves.end(), tokens.begin())) {
    throw DataError("bracketed tree yield does not match argument tokens (" +
                    std::to_string(leaves.size()) + " leaves vs " +
                    std::to_string(tokens.size()) + " tokens)");
  }
  return t;
}

// One tree per non-empty line.
inline std::vector<TreePtr> load_bracketed_trees(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open tree file: " + path);
  std::vector<TreePtr> trees;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      trees.push_back(binarize(line));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return trees;
}

// ---------------------------------------------------------------------------
// Relation instances.
// ---------------------------------------------------------------------------

enum class RelationType { Explicit, Implicit, EntRel, AltLex, Other };

inline RelationType relation_type_from_name(const std::string& s) {
  if (s == "Explicit") return RelationType::Explicit;
  if (s == "Implicit") return RelationType::Implicit;
  if (s == "EntRel") return RelationType::EntRel;
  if (s == "AltLex") return RelationType::AltLex;
  return RelationType::Other;
}

inline const char* relation_type_name(RelationType t) {
  switch (t) {
    case RelationType::Explicit: return "Explicit";
    case RelationType::Implicit: return "Implicit";
    case RelationType::EntRel: return "EntRel";
    case RelationType::AltLex: return "AltLex";
    case RelationType::Other: return "Other";
  }
  return "?";
}

struct RelationInstance {
  std::string id;
  std::string doc_id;
  std::string split;
  RelationType type = RelationType::Other;
  std::vector<std::string> arg1_tokens;
  std::vector<std::string> arg2_tokens;
  std::vector<std::string> senses;  // annotation order preserved
  TreePtr arg1_tree;                // optional
  TreePtr arg2_tree;                // optional
};

namespace detail {

inline std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::istringstream ss(text);
  std::vector<std::string> toks;
  std::string t;
  while (ss >> t) toks.push_back(t);
  return toks;
}

// CoNLL-ST argument objects either carry token strings directly (Words, or a
// TokenList of strings) or only character-offset token lists plus RawText;
// in the latter case RawText is whitespace-split.
inline std::vector<std::string> extract_arg_tokens(const nlohmann::json& arg) {
  if (arg.contains("Words") && arg["Words"].is_array()) {
    std::vector<std::string> toks;
    for (const auto& w : arg["Words"]) toks.push_back(w.get<std::string>());
    return toks;
  }
  if (arg.contains("TokenList") && arg["TokenList"].is_array() &&
      !arg["TokenList"].empty() && arg["TokenList"][0].is_string()) {
    std::vector<std::string> toks;
    for (const auto& w : arg["TokenList"]) toks.push_back(w.get<std::string>());
    return toks;
  }
  if (arg.contains("RawText") && arg["RawText"].is_string()) {
    return whitespace_tokens(arg["RawText"].get<std::string>());
  }
  return {};
}

}  // namespace detail

// Loads newline-delimited JSON relations in the CoNLL shared-task layout.
// Each line must carry Arg1, Arg2, Type, and (except for EntRel) Sense.
// Optional ParseTree fields (inside the argument objects, or top-level
// Arg1Tree/Arg2Tree) are binarized against the argument tokens.
inline std::vector<RelationInstance> load_conll_json(const std::string& path,
                                                     const std::string& split = "") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open relation file: " + path);
  std::vector<RelationInstance> instances;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    auto fail = [&](const std::string& msg) -> DataError {
      return DataError(path + ":" + std::to_string(lineno) + ": " + msg);
    };
    if (!j.contains("Arg1") || !j.contains("Arg2")) throw fail("missing Arg1/Arg2");
    if (!j.contains("Type")) throw fail("missing Type");

    RelationInstance inst;
    inst.type = relation_type_from_name(j["Type"].get<std::string>());
    inst.arg1_tokens = detail::extract_arg_tokens(j["Arg1"]);
    inst.arg2_tokens = detail::extract_arg_tokens(j["Arg2"]);
    if (j.contains("Sense")) {
      if (!j["Sense"].is_array()) throw fail("Sense must be a list of strings");
      for (const auto& s : j["Sense"]) inst.senses.push_back(s.get<std::string>());
    }
    if (inst.senses.empty() && inst.type == RelationType::EntRel) {
      inst.senses.push_back("EntRel");
    }
    if (inst.senses.empty()) throw fail("missing Sense");
    if (j.contains("DocID")) inst.doc_id = j["DocID"].get<std::string>();
    if (j.contains("ID")) {
      if (j["ID"].is_string()) {
        inst.id = j["ID"].get<std::string>();
      } else if (j["ID"].is_number()) {
        inst.id = std::to_string(j["ID"].get<long long>());
      }
    }
    if (inst.id.empty()) inst.id = "line" + std::to_string(lineno);
    inst.split = split;
    if (split.empty() && j.contains("Split")) inst.split = j["Split"].get<std::string>();

    auto tree_text = [&](const char* arg_key, const char* top_key) -> std::string {
      if (j[arg_key].contains("ParseTree") && j[arg_key]["ParseTree"].is_string()) {
        return j[arg_key]["ParseTree"].get<std::string>();
      }
      if (j.contains(top_key) && j[top_key].is_string()) {
        return j[top_key].get<std::string>();
      }
      return "";
    };
    try {
      std::string t1 = tree_text("Arg1", "Arg1Tree");
      std::string t2 = tree_text("Arg2", "Arg2Tree");
      if (!t1.empty()) inst.arg1_tree = binarize_for(t1, inst.arg1_tokens);
      if (!t2.empty()) inst.arg2_tree = binarize_for(t2, inst.arg2_tokens);
    } catch (const DataError& e) {
      throw fail(e.what());
    }
    instances.push_back(std::move(inst));
  }
  return instances;
}

// ---------------------------------------------------------------------------
// Label schemes and task filtering.
// ---------------------------------------------------------------------------

// How raw sense strings map onto scheme labels.
enum class SenseRule {
  PdtbLevel2,  // Implicit only; senses truncated to their level-2 prefix
  AsProvided,  // non-explicit kept; senses used verbatim, EntRel from Type
};

struct LabelScheme {
  std::string name;
  std::vector<std::string> labels;
  SenseRule rule = SenseRule::AsProvided;

  int index_of(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) return static_cast<int>(i);
    }
    return -1;
  }

  // The 11 second-level PDTB senses.
  static LabelScheme pdtb_level2() {
    return LabelScheme{"PDTB-L2-11",
                       {
                           "Comparison.Concession",
                           "Comparison.Contrast",
                           "Contingency.Cause",
                           "Contingency.Pragmatic cause",
                           "Expansion.Alternative",
                           "Expansion.Conjunction",
                           "Expansion.Instantiation",
                           "Expansion.List",
                           "Expansion.Restatement",
                           "Temporal.Asynchronous",
                           "Temporal.Synchrony",
                       },
                       SenseRule::PdtbLevel2};
  }

  // The 15 senses of the CoNLL 2015-2016 English shared task, EntRel included.
  static LabelScheme conll15() {
    return LabelScheme{"CONLL-15",
                       {
                           "Comparison.Concession",
                           "Comparison.Contrast",
                           "Contingency.Cause.Reason",
                           "Contingency.Cause.Result",
                           "Contingency.Condition",
                           "EntRel",
                           "Expansion.Alternative",
                           "Expansion.Alternative.Chosen alternative",
                           "Expansion.Conjunction",
                           "Expansion.Exception",
                           "Expansion.Instantiation",
                           "Expansion.Restatement",
                           "Temporal.Asynchronous.Precedence",
                           "Temporal.Asynchronous.Succession",
                           "Temporal.Synchrony",
                       },
                       SenseRule::AsProvided};
  }

  // The 10 flat senses of the CoNLL 2016 Chinese (CDTB) task.
  static LabelScheme cdtb10() {
    return LabelScheme{"CDTB-10",
                       {
                           "Alternative",
                           "Causation",
                           "Conditional",
                           "Conjunction",
                           "Contrast",
                           "EntRel",
                           "Expansion",
                           "Progression",
                           "Purpose",
                           "Temporal",
                       },
                       SenseRule::AsProvided};
  }

  // Plain-text label list, one label per line; '#' comments allowed.
  static LabelScheme from_file(const std::string& name, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open label list: " + path);
    LabelScheme scheme{name, {}, SenseRule::AsProvided};
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      if (scheme.index_of(line) >= 0) {
        throw DataError(path + ": duplicate label '" + line + "'");
      }
      scheme.labels.push_back(line);
    }
    if (scheme.labels.empty()) throw DataError(path + ": label list is empty");
    return scheme;
  }

  static LabelScheme by_name(const std::string& name) {
    if (name == "PDTB-L2-11") return pdtb_level2();
    if (name == "CONLL-15") return conll15();
    if (name == "CDTB-10") return cdtb10();
    throw ConfigError("unknown label scheme: '" + name +
                      "' (expected PDTB-L2-11, CONLL-15, or CDTB-10)");
  }
};

// A relation instance mapped onto a scheme. `label` is the training target
// (first-label rule); `gold_labels` holds every mapped gold sense for
// evaluation and always contains `label`.
struct LabeledInstance {
  std::string id;
  std::vector<std::string> arg1_tokens;
  std::vector<std::string> arg2_tokens;
  TreePtr arg1_tree;
  TreePtr arg2_tree;
  int label = -1;
  std::vector<int> gold_labels;
};

struct FilterReport {
  std::size_t kept = 0;
  std::size_t dropped_by_type = 0;
  std::size_t dropped_partial = 0;
  std::size_t dropped_unknown = 0;
  std::size_t dropped_empty_arg = 0;
  std::map<std::string, std::size_t> rejected_senses;

  std::size_t dropped() const {
    return dropped_by_type + dropped_partial + dropped_unknown + dropped_empty_arg;
  }
};

struct Dataset {
  LabelScheme scheme;
  std::vector<LabeledInstance> instances;

  std::size_t size() const { return instances.size(); }
  bool empty() const { return instances.empty(); }
};

namespace detail {

// Level-2 prefix ("Contingency.Cause.Reason" -> "Contingency.Cause"), or
// nullopt for a partial label with no second level.
inline std::optional<std::string> level2_prefix(const std::string& sense) {
  std::size_t first = sense.find('.');
  if (first == std::string::npos || first + 1 >= sense.size()) return std::nullopt;
  std::size_t second = sense.find('.', first + 1);
  return second == std::string::npos ? sense : sense.substr(0, second);
}

}  // namespace detail

// Applies the task protocol for the scheme:
//   PDTB-L2-11  keeps Implicit relations only, truncates senses to their
//               level-2 prefix, uses the first label, and excludes partial
//               labels (no level-2 component).
//   AsProvided  (CONLL-15, CDTB-10, file-based schemes) keeps Implicit,
//               EntRel, and AltLex relations; EntRel is triggered by the
//               Type field; senses are matched verbatim.
// Senses that map outside the scheme go to the reject report.
inline Dataset filter_for_task(std::span<const RelationInstance> instances,
                               const LabelScheme& scheme,
                               FilterReport* report = nullptr) {
  FilterReport local;
  FilterReport& rep = report ? *report : local;
  Dataset out;
  out.scheme = scheme;
  std::size_t running = 0;
  for (const RelationInstance& inst : instances) {
    ++running;
    bool type_ok = scheme.rule == SenseRule::PdtbLevel2
                       ? inst.type == RelationType::Implicit
                       : (inst.type == RelationType::Implicit ||
                          inst.type == RelationType::EntRel ||
                          inst.type == RelationType::AltLex);
    if (!type_ok) {
      ++rep.dropped_by_type;
      continue;
    }
    if (inst.arg1_tokens.empty() || inst.arg2_tokens.empty()) {
      ++rep.dropped_empty_arg;
      continue;
    }

    std::vector<int> mapped;
    bool partial = false;
    if (scheme.rule == SenseRule::PdtbLevel2) {
      if (inst.senses.empty()) {
        partial = true;
      } else {
        // first-label rule: only the first annotated sense is used
        std::optional<std::string> l2 = detail::level2_prefix(inst.senses.front());
        if (!l2) {
          partial = true;
        } else {
          int idx = scheme.index_of(*l2);
          if (idx < 0) {
            ++rep.rejected_senses[*l2];
          } else {
            mapped.push_back(idx);
          }
        }
      }
    } else {
      std::vector<std::string> senses = inst.type == RelationType::EntRel
                                            ? std::vector<std::string>{"EntRel"}
                                            : inst.senses;
      for (const std::string& s : senses) {
        int idx = scheme.index_of(s);
        if (idx < 0) {
          ++rep.rejected_senses[s];
          continue;
        }
        if (std::find(mapped.begin(), mapped.end(), idx) == mapped.end()) {
          mapped.push_back(idx);
        }
      }
    }

    if (partial) {
      ++rep.dropped_partial;
      continue;
    }
    if (mapped.empty()) {
      ++rep.dropped_unknown;
      continue;
    }

    LabeledInstance li;
    li.id = inst.id.empty() ? "i" + std::to_string(running) : inst.id;
    if (!inst.doc_id.empty()) li.id = inst.doc_id + ":" + li.id;
    li.arg1_tokens = inst.arg1_tokens;
    li.arg2_tokens = inst.arg2_tokens;
    li.arg1_tree = inst.arg1_tree;
    li.arg2_tree = inst.arg2_tree;
    li.label = mapped.front();
    li.gold_labels = std::move(mapped);
    out.instances.push_back(std::move(li));
    ++rep.kept;
  }
  return out;
}

// Re-filters an already filtered dataset; with labels standing in for raw
// senses this is the identity, which makes idempotence checkable.
inline Dataset filter_for_task(const Dataset& ds, FilterReport* report = nullptr) {
  std::vector<RelationInstance> raw;
  raw.reserve(ds.instances.size());
  for (const LabeledInstance& li : ds.instances) {
    RelationInstance r;
    r.id = li.id;
    r.type = RelationType::Implicit;
    r.arg1_tokens = li.arg1_tokens;
    r.arg2_tokens = li.arg2_tokens;
    for (int g : li.gold_labels) r.senses.push_back(ds.scheme.labels[g]);
    r.arg1_tree = li.arg1_tree;
    r.arg2_tree = li.arg2_tree;
    raw.push_back(std::move(r));
  }
  return filter_for_task(raw, ds.scheme, report);
}

// Counts per label index over the training targets (first labels only,
// so double-labeled instances are not double-counted).
inline std::vector<std::size_t> label_distribution(const Dataset& ds) {
  std::vector<std::size_t> counts(ds.scheme.labels.size(), 0);
  for (const LabeledInstance& li : ds.instances) {
    counts[static_cast<std::size_t>(li.label)]++;
  }
  return counts;
}

// Fills missing parse trees with right-branching chains; returns how many
// arguments needed the fallback.
inline std::size_t ensure_trees(Dataset& ds) {
  std::size_t fallbacks = 0;
  for (LabeledInstance& li : ds.instances) {
    if (!li.arg1_tree) {
      li.arg1_tree = right_chain(li.arg1_tokens);
      ++fallbacks;
    }
    if (!li.arg2_tree) {
      li.arg2_tree = right_chain(li.arg2_tokens);
      ++fallbacks;
    }
  }
  return fallbacks;
}

}  // namespace drc
