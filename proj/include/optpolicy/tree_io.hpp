#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "optpolicy/core_model.hpp"

namespace optpolicy {

inline constexpr int kTreeFormatVersion = 1;

namespace detail {

inline nlohmann::ordered_json node_to_json(const PolicyTree& tree, std::size_t id) {
  const Node& n = tree.nodes[id];
  nlohmann::ordered_json j;
  if (n.leaf) {
    j["treatment"] = n.treatment;
    j["n_train"] = n.n_train;
  } else {
    j["feature"] = n.feature;
    j["threshold"] = n.threshold;
    j["left"] = node_to_json(tree, n.left);
    j["right"] = node_to_json(tree, n.right);
  }
  return j;
}

template <typename T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw ParseError(where + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(where + ": field '" + key + "' has the wrong type");
  }
}

// Appends the subtree rooted at j in preorder so children follow parents.
inline std::size_t node_from_json(const nlohmann::json& j, const std::string& where, PolicyTree& tree) {
  if (!j.is_object()) throw ParseError(where + ": node is not an object");
  const bool has_leaf = j.contains("treatment");
  const bool has_branch = j.contains("feature") || j.contains("threshold") || j.contains("left") ||
                          j.contains("right");
  if (has_leaf == has_branch) {
    throw ParseError(where + ": node must be either a leaf {treatment, n_train} or a branch "
                     "{feature, threshold, left, right}");
  }
  const std::size_t id = tree.nodes.size();
  if (has_leaf) {
    tree.nodes.push_back(Node::make_leaf(field<std::size_t>(j, "treatment", where),
                                         field<std::size_t>(j, "n_train", where)));
    return id;
  }
  auto feature = field<std::size_t>(j, "feature", where);
  auto threshold = field<double>(j, "threshold", where);
  if (!j.contains("left")) throw ParseError(where + ": branch is missing child 'left'");
  if (!j.contains("right")) throw ParseError(where + ": branch is missing child 'right'");
  tree.nodes.push_back(Node::make_branch(feature, threshold, Node::kNone, Node::kNone));
  std::size_t left = node_from_json(j["left"], where + ".left", tree);
  std::size_t right = node_from_json(j["right"], where + ".right", tree);
  tree.nodes[id].left = left;
  tree.nodes[id].right = right;
  return id;
}

}  // namespace detail

inline nlohmann::ordered_json tree_to_json(const PolicyTree& tree) {
  tree.validate();
  nlohmann::ordered_json doc;
  doc["format_version"] = kTreeFormatVersion;
  doc["feature_names"] = tree.feature_names;
  doc["treatment_labels"] = tree.treatment_labels;
  doc["hyperparams"] = {{"max_depth", tree.hyperparams.max_depth},
                        {"alpha", tree.hyperparams.alpha},
                        {"min_leaf", tree.hyperparams.min_leaf},
                        {"restarts", tree.hyperparams.restarts},
                        {"seed", tree.hyperparams.seed}};
  doc["objective_train"] = tree.objective_train;
  doc["tree"] = detail::node_to_json(tree, 0);
  return doc;
}

inline std::string serialize_tree(const PolicyTree& tree) { return tree_to_json(tree).dump(2) + "\n"; }

inline PolicyTree tree_from_json(const nlohmann::json& doc) {
  using detail::field;
  if (!doc.is_object()) throw ParseError("tree document is not an object");
  auto version = field<int>(doc, "format_version", "header");
  if (version != kTreeFormatVersion) {
    throw ParseError("header: unsupported format_version " + std::to_string(version));
  }
  PolicyTree tree;
  tree.feature_names = field<std::vector<std::string>>(doc, "feature_names", "header");
  tree.num_features = tree.feature_names.size();
  tree.treatment_labels = field<std::vector<std::string>>(doc, "treatment_labels", "header");
  tree.objective_train = field<double>(doc, "objective_train", "header");
  if (!doc.contains("hyperparams")) throw ParseError("header: missing field 'hyperparams'");
  const auto& hp = doc["hyperparams"];
  tree.hyperparams.max_depth = field<int>(hp, "max_depth", "hyperparams");
  tree.hyperparams.alpha = field<double>(hp, "alpha", "hyperparams");
  tree.hyperparams.min_leaf = field<std::size_t>(hp, "min_leaf", "hyperparams");
  tree.hyperparams.restarts = field<std::size_t>(hp, "restarts", "hyperparams");
  tree.hyperparams.seed = field<std::uint64_t>(hp, "seed", "hyperparams");
  if (!doc.contains("tree")) throw ParseError("header: missing field 'tree'");
  detail::node_from_json(doc["tree"], "tree", tree);
  try {
    tree.validate();
  } catch (const InputError& e) {
    throw ParseError(std::string("invalid tree: ") + e.what());
  }
  return tree;
}

inline PolicyTree deserialize_tree(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("tree document is not valid JSON: ") + e.what());
  }
  return tree_from_json(doc);
}

inline void save_tree(const PolicyTree& tree, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << serialize_tree(tree);
}

inline PolicyTree load_tree(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_tree(ss.str());
}

}  // namespace optpolicy
