#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "pilotrep/rng.hpp"

namespace pilotrep {

// Robust random cut tree over fixed-dimension points. Cuts are drawn with
// probability proportional to the bounding-box side lengths; exact duplicate
// points share one leaf with a multiplicity count. Supports streaming insert
// and forget so a forest can maintain a sliding window.
class RobustRandomCutTree {
 public:
  explicit RobustRandomCutTree(std::uint64_t seed) : rng_(seed) {}

  std::size_t leaf_count() const { return root_ ? root_->n : 0; }
  bool contains(std::uint64_t index) const { return leaves_.count(index) > 0; }

  // Inserts the point under the given stream index and returns the collusive
  // displacement of its leaf: max over ancestors of
  // (sibling subtree size / own subtree size).
  double insert(std::uint64_t index, std::span<const double> point) {
    for (double v : point) {
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite point value");
    }
    if (leaves_.count(index)) throw std::invalid_argument("duplicate stream index");
    if (!root_) {
      dims_ = point.size();
      root_ = make_leaf(point);
      leaves_[index] = root_.get();
      return 0.0;
    }
    if (point.size() != dims_) throw std::invalid_argument("dimension mismatch");

    if (Node* dup = find_duplicate(point)) {
      ++dup->count;
      for (Node* n = dup; n != nullptr; n = n->parent) ++n->n;
      leaves_[index] = dup;
      return codisp_of(dup);
    }

    // Walk down until a random cut in the extended bounding box separates the
    // new point from the current subtree.
    std::unique_ptr<Node>* link = &root_;
    Node* parent = nullptr;
    for (;;) {
      Node* node = link->get();
      std::vector<double> ext_min(dims_), ext_max(dims_);
      double total_span = 0.0;
      for (std::size_t d = 0; d < dims_; ++d) {
        ext_min[d] = std::min(node->bbox_min[d], point[d]);
        ext_max[d] = std::max(node->bbox_max[d], point[d]);
        total_span += ext_max[d] - ext_min[d];
      }
      const double r = rng_.uniform01() * total_span;
      std::size_t dim = dims_ - 1;
      double cumulative = 0.0;
      double cut = 0.0;
      for (std::size_t d = 0; d < dims_; ++d) {
        cumulative += ext_max[d] - ext_min[d];
        if (cumulative >= r) {
          dim = d;
          cut = ext_min[d] + (cumulative - r);
          break;
        }
      }
      if (cut < node->bbox_min[dim]) {
        attach_branch(link, parent, point, index, dim, cut, /*leaf_left=*/true,
                      std::move(ext_min), std::move(ext_max));
        break;
      }
      if (cut >= node->bbox_max[dim]) {
        attach_branch(link, parent, point, index, dim, cut, /*leaf_left=*/false,
                      std::move(ext_min), std::move(ext_max));
        break;
      }
      // Cut fell inside the existing box; descend along the node's own cut.
      parent = node;
      link = point[node->cut_dim] <= node->cut_value ? &node->left : &node->right;
    }
    return codisp_of(leaves_.at(index));
  }

  void forget(std::uint64_t index) {
    auto it = leaves_.find(index);
    if (it == leaves_.end()) throw std::invalid_argument("unknown stream index");
    Node* leaf = it->second;
    leaves_.erase(it);
    if (leaf->count > 1) {
      --leaf->count;
      for (Node* n = leaf; n != nullptr; n = n->parent) --n->n;
      return;
    }
    if (leaf == root_.get()) {
      root_.reset();
      return;
    }
    Node* parent = leaf->parent;
    std::unique_ptr<Node>& sibling_slot =
        parent->left.get() == leaf ? parent->right : parent->left;
    std::unique_ptr<Node> sibling = std::move(sibling_slot);
    Node* grandparent = parent->parent;
    sibling->parent = grandparent;
    if (grandparent == nullptr) {
      root_ = std::move(sibling);  // parent (and leaf under it) destroyed
    } else {
      std::unique_ptr<Node>& parent_slot =
          grandparent->left.get() == parent ? grandparent->left
                                            : grandparent->right;
      parent_slot = std::move(sibling);
    }
    for (Node* n = grandparent; n != nullptr; n = n->parent) {
      --n->n;
      for (std::size_t d = 0; d < dims_; ++d) {
        n->bbox_min[d] = std::min(n->left->bbox_min[d], n->right->bbox_min[d]);
        n->bbox_max[d] = std::max(n->left->bbox_max[d], n->right->bbox_max[d]);
      }
    }
  }

  double codisp(std::uint64_t index) const { return codisp_of(leaves_.at(index)); }

  // --- structural checks used by tests ---

  // Every internal node's bounding box equals the union of its children's,
  // and every subtree size equals the sum of leaf multiplicities below it.
  bool check_structure() const { return !root_ || check_node(root_.get()); }

  bool check_leaves_within_ancestor_boxes() const {
    if (!root_) return true;
    return check_containment(root_.get());
  }

  // (point, multiplicity) pairs sorted for multiset comparison.
  std::vector<std::pair<std::vector<double>, std::size_t>> leaf_multiset() const {
    std::vector<std::pair<std::vector<double>, std::size_t>> out;
    collect_leaves(root_.get(), out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    Node* parent = nullptr;
    std::unique_ptr<Node> left;
    std::unique_ptr<Node> right;
    std::size_t n = 1;  // leaf multiplicities in this subtree
    std::vector<double> bbox_min;
    std::vector<double> bbox_max;
    // internal nodes
    std::size_t cut_dim = 0;
    double cut_value = 0.0;
    // leaves
    std::vector<double> point;
    std::size_t count = 0;  // multiplicity; 0 marks an internal node

    bool is_leaf() const { return count > 0; }
  };

  std::unique_ptr<Node> make_leaf(std::span<const double> point) {
    auto leaf = std::make_unique<Node>();
    leaf->point.assign(point.begin(), point.end());
    leaf->bbox_min = leaf->point;
    leaf->bbox_max = leaf->point;
    leaf->count = 1;
    return leaf;
  }

  // Follows the tree's cuts to the leaf an equal point would occupy.
  Node* find_duplicate(std::span<const double> point) {
    Node* node = root_.get();
    while (!node->is_leaf()) {
      node = point[node->cut_dim] <= node->cut_value ? node->left.get()
                                                     : node->right.get();
    }
    return std::equal(point.begin(), point.end(), node->point.begin()) ? node
                                                                       : nullptr;
  }

  void attach_branch(std::unique_ptr<Node>* link, Node* parent,
                     std::span<const double> point, std::uint64_t index,
                     std::size_t dim, double cut, bool leaf_left,
                     std::vector<double> ext_min, std::vector<double> ext_max) {
    std::unique_ptr<Node> displaced = std::move(*link);
    auto leaf = make_leaf(point);
    leaves_[index] = leaf.get();
    auto branch = std::make_unique<Node>();
    branch->parent = parent;
    branch->cut_dim = dim;
    branch->cut_value = cut;
    branch->n = displaced->n + 1;
    branch->bbox_min = std::move(ext_min);
    branch->bbox_max = std::move(ext_max);
    displaced->parent = branch.get();
    leaf->parent = branch.get();
    if (leaf_left) {
      branch->left = std::move(leaf);
      branch->right = std::move(displaced);
    } else {
      branch->left = std::move(displaced);
      branch->right = std::move(leaf);
    }
    *link = std::move(branch);
    for (Node* n = parent; n != nullptr; n = n->parent) {
      ++n->n;
      for (std::size_t d = 0; d < dims_; ++d) {
        n->bbox_min[d] = std::min(n->bbox_min[d], point[d]);
        n->bbox_max[d] = std::max(n->bbox_max[d], point[d]);
      }
    }
  }

  double codisp_of(const Node* leaf) const {
    double best = 0.0;
    const Node* node = leaf;
    while (node->parent != nullptr) {
      const Node* parent = node->parent;
      const Node* sibling =
          parent->left.get() == node ? parent->right.get() : parent->left.get();
      best = std::max(best, static_cast<double>(sibling->n) /
                                static_cast<double>(node->n));
      node = parent;
    }
    return best;
  }

  bool check_node(const Node* node) const {
    if (node->is_leaf()) {
      return node->n == node->count && node->bbox_min == node->point &&
             node->bbox_max == node->point;
    }
    if (!node->left || !node->right) return false;
    if (node->left->parent != node || node->right->parent != node) return false;
    if (node->n != node->left->n + node->right->n) return false;
    for (std::size_t d = 0; d < dims_; ++d) {
      if (node->bbox_min[d] !=
          std::min(node->left->bbox_min[d], node->right->bbox_min[d]))
        return false;
      if (node->bbox_max[d] !=
          std::max(node->left->bbox_max[d], node->right->bbox_max[d]))
        return false;
    }
    return check_node(node->left.get()) && check_node(node->right.get());
  }

  bool check_containment(const Node* node) const {
    if (node->is_leaf()) return true;
    for (std::size_t d = 0; d < dims_; ++d) {
      for (const Node* child : {node->left.get(), node->right.get()}) {
        if (child->bbox_min[d] < node->bbox_min[d]) return false;
        if (child->bbox_max[d] > node->bbox_max[d]) return false;
      }
    }
    return check_containment(node->left.get()) &&
           check_containment(node->right.get());
  }

  void collect_leaves(
      const Node* node,
      std::vector<std::pair<std::vector<double>, std::size_t>>& out) const {
    if (node == nullptr) return;
    if (node->is_leaf()) {
      out.emplace_back(node->point, node->count);
      return;
    }
    collect_leaves(node->left.get(), out);
    collect_leaves(node->right.get(), out);
  }

  Rng rng_;
  std::size_t dims_ = 0;
  std::unique_ptr<Node> root_;
  std::unordered_map<std::uint64_t, Node*> leaves_;
};

struct RrcfConfig {
  int num_trees = 40;
  int window_size = 256;  // points per tree; oldest evicted on overflow
  int shingle_size = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_trees < 1) throw std::invalid_argument("num_trees must be >= 1");
    if (window_size < 1) throw std::invalid_argument("window_size must be >= 1");
    if (shingle_size < 1) throw std::invalid_argument("shingle_size must be >= 1");
  }
};

// Forest of independently cut trees over one sliding window of points.
class RrcfForest {
 public:
  explicit RrcfForest(const RrcfConfig& config) : config_(config) {
    config_.validate();
    trees_.reserve(static_cast<std::size_t>(config_.num_trees));
    for (int i = 0; i < config_.num_trees; ++i) {
      trees_.emplace_back(mix_seed({config_.seed, 0x52524346u, static_cast<std::uint64_t>(i)}));
    }
  }

  // Inserts into every tree (evicting the oldest point first when the window
  // is full) and returns the average collusive displacement.
  double insert(std::span<const double> point) {
    if (point.size() != static_cast<std::size_t>(config_.shingle_size)) {
      throw std::invalid_argument("point must have shingle_size dimensions");
    }
    if (window_count() == static_cast<std::size_t>(config_.window_size)) {
      for (auto& tree : trees_) tree.forget(oldest_);
      ++oldest_;
    }
    double sum = 0.0;
    for (auto& tree : trees_) sum += tree.insert(next_, point);
    ++next_;
    return sum / static_cast<double>(trees_.size());
  }

  std::size_t window_count() const { return static_cast<std::size_t>(next_ - oldest_); }
  const RrcfConfig& config() const { return config_; }
  std::span<const RobustRandomCutTree> trees() const { return trees_; }

 private:
  RrcfConfig config_;
  std::vector<RobustRandomCutTree> trees_;
  std::uint64_t next_ = 0;
  std::uint64_t oldest_ = 0;
};

}  // namespace pilotrep
