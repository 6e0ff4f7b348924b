#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hmat/core.hpp"
#include "hmat/parallel.hpp"

namespace hmat {

struct BoundingBox {
  int dim = 0;
  std::array<double, kMaxDim> a{};  // per-axis minima
  std::array<double, kMaxDim> b{};  // per-axis maxima
};

// Block cluster tree node: a pair of clusters with their bounding boxes and,
// once emitted as a leaf, the admissibility flag.
struct WorkItem {
  Cluster row;
  Cluster col;
  BoundingBox box_row;
  BoundingBox box_col;
  bool admissible = false;
};

double diam(const BoundingBox& box);
double dist(const BoundingBox& qt, const BoundingBox& qs);

// min{diam(Qt), diam(Qs)} <= eta * dist(Qt, Qs)
bool is_admissible(const BoundingBox& qt, const BoundingBox& qs, double eta);

struct TraversalNoPrep {
  template <class Node>
  void operator()(std::span<Node>) const {}
};

// Level-synchronous traversal: per level, count children per node, exclusive
// scan for offsets, then emit children into a freshly allocated level array.
// on_level runs single-threaded over each level before counting.
template <class Node, class CountFn, class EmitFn, class LevelFn = TraversalNoPrep>
void traverse(const Node& root, CountFn&& count_children, EmitFn&& emit_children, LevelFn&& on_level = {}) {
  std::vector<Node> node_data{root};
  while (!node_data.empty()) {
    on_level(std::span<Node>(node_data));
    const std::int64_t width = static_cast<std::int64_t>(node_data.size());
    std::vector<std::int64_t> child_count(static_cast<std::size_t>(width));
    parallel_for(width, [&](std::int64_t i) {
      child_count[static_cast<std::size_t>(i)] = count_children(node_data[static_cast<std::size_t>(i)]);
    }, 256);
    auto [child_offset, total] = exclusive_scan(child_count);
    std::vector<Node> next_level(static_cast<std::size_t>(total));
    parallel_for(width, [&](std::int64_t i) {
      emit_children(node_data[static_cast<std::size_t>(i)],
                    next_level.data() + child_offset[static_cast<std::size_t>(i)]);
    }, 256);
    node_data = std::move(next_level);
  }
}

enum class AdmissibilityMode {
  Geometric,        // the bounding-box condition
  ForceDense,       // test-only: every leaf non-admissible
  ForceAdmissible,  // test-only: every node admissible
};

struct BlockTreeOptions {
  double eta = 1.5;
  std::int64_t c_leaf = 256;
  AdmissibilityMode admissibility = AdmissibilityMode::Geometric;
};

// Builds the block cluster tree over I x I with cardinality-split clusters
// (first child gets ceil(size/2)) and returns the flagged leaf queue in a
// canonical order (sorted by cluster bounds) so downstream consumers are
// deterministic.
std::vector<WorkItem> build_block_cluster_tree(const PointSet& points, const BlockTreeOptions& options);

enum class ClusterSide { Row, Col };

// Bounding boxes of the unique clusters appearing on one side of a level's
// nodes, ordered by cluster lower bound. Throws if clusters on the level
// overlap (contract violation).
std::vector<BoundingBox> compute_bounding_box_lookup_table(std::span<const WorkItem> nodes,
                                                           const PointSet& points, ClusterSide side);

// map[i] = row of the lookup table holding node i's cluster on that side.
std::vector<std::int64_t> create_map_for_bounding_boxes(std::span<const WorkItem> nodes, ClusterSide side);

// Debug dump of a leaf set: row_lower,row_upper,col_lower,col_upper,admissible.
void dump_leaves_csv(std::span<const WorkItem> leaves, const std::string& path);

}  // namespace hmat
