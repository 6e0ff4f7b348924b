#include "hmat/tree.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <tuple>

namespace hmat {

double diam(const BoundingBox& box) {
  double sum = 0.0;
  for (int i = 0; i < box.dim; ++i) {
    const double side = box.b[static_cast<std::size_t>(i)] - box.a[static_cast<std::size_t>(i)];
    sum += side * side;
  }
  return std::sqrt(sum);
}

double dist(const BoundingBox& qt, const BoundingBox& qs) {
  double sum = 0.0;
  for (int i = 0; i < qt.dim; ++i) {
    const double gap_ts = std::max(0.0, qt.a[static_cast<std::size_t>(i)] - qs.b[static_cast<std::size_t>(i)]);
    const double gap_st = std::max(0.0, qs.a[static_cast<std::size_t>(i)] - qt.b[static_cast<std::size_t>(i)]);
    sum += gap_ts * gap_ts + gap_st * gap_st;
  }
  return std::sqrt(sum);
}

bool is_admissible(const BoundingBox& qt, const BoundingBox& qs, double eta) {
  return std::min(diam(qt), diam(qs)) <= eta * dist(qt, qs);
}

namespace {

Cluster side_cluster(const WorkItem& node, ClusterSide side) {
  return side == ClusterSide::Row ? node.row : node.col;
}

std::vector<Cluster> unique_sorted_clusters(std::span<const WorkItem> nodes, ClusterSide side) {
  std::vector<Cluster> clusters(nodes.size());
  parallel_for(static_cast<std::int64_t>(nodes.size()), [&](std::int64_t i) {
    clusters[static_cast<std::size_t>(i)] = side_cluster(nodes[static_cast<std::size_t>(i)], side);
  });
  std::sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& b) {
    return std::tie(a.lower, a.upper) < std::tie(b.lower, b.upper);
  });
  clusters.erase(std::unique(clusters.begin(), clusters.end()), clusters.end());
  for (std::size_t j = 1; j < clusters.size(); ++j) {
    if (clusters[j - 1].upper > clusters[j].lower) {
      throw std::invalid_argument("bounding box lookup: overlapping clusters on one level");
    }
  }
  return clusters;
}

}  // namespace

std::vector<BoundingBox> compute_bounding_box_lookup_table(std::span<const WorkItem> nodes,
                                                           const PointSet& points, ClusterSide side) {
  const std::vector<Cluster> clusters = unique_sorted_clusters(nodes, side);
  const std::int64_t m = static_cast<std::int64_t>(clusters.size());

  std::vector<BatchBounds> bounds(clusters.size());
  std::vector<std::int64_t> batch_keys(clusters.size());
  for (std::int64_t j = 0; j < m; ++j) {
    bounds[static_cast<std::size_t>(j)] = {clusters[static_cast<std::size_t>(j)].lower,
                                           clusters[static_cast<std::size_t>(j)].upper};
    batch_keys[static_cast<std::size_t>(j)] = j + 1;
  }
  const std::vector<std::int64_t> keys = create_keys(bounds, batch_keys, points.count);

  std::vector<BoundingBox> table(clusters.size());
  for (std::int64_t j = 0; j < m; ++j) table[static_cast<std::size_t>(j)].dim = points.dim;

  for (int axis = 0; axis < points.dim; ++axis) {
    const std::span<const double> coords(points.coords[static_cast<std::size_t>(axis)]);
    auto [maxima, max_keys] = reduce_by_key(coords, std::span<const std::int64_t>(keys), MaxOp{});
    auto [minima, min_keys] = reduce_by_key(coords, std::span<const std::int64_t>(keys), MinOp{});
    remove_by_key(maxima, max_keys, 0);
    remove_by_key(minima, min_keys, 0);
    if (static_cast<std::int64_t>(maxima.size()) != m) {
      throw std::logic_error("bounding box lookup: reduction result count mismatch");
    }
    for (std::int64_t j = 0; j < m; ++j) {
      table[static_cast<std::size_t>(j)].a[static_cast<std::size_t>(axis)] = minima[static_cast<std::size_t>(j)];
      table[static_cast<std::size_t>(j)].b[static_cast<std::size_t>(axis)] = maxima[static_cast<std::size_t>(j)];
    }
  }
  return table;
}

std::vector<std::int64_t> create_map_for_bounding_boxes(std::span<const WorkItem> nodes, ClusterSide side) {
  const std::int64_t n = static_cast<std::int64_t>(nodes.size());
  std::vector<std::int64_t> lower_bounds(nodes.size());
  std::vector<std::int64_t> permutation(nodes.size());
  parallel_for(n, [&](std::int64_t i) {
    lower_bounds[static_cast<std::size_t>(i)] = side_cluster(nodes[static_cast<std::size_t>(i)], side).lower;
    permutation[static_cast<std::size_t>(i)] = i;
  });
  stable_sort_by_key(lower_bounds, permutation);

  std::vector<std::int64_t> marks(nodes.size());
  parallel_for(n, [&](std::int64_t i) {
    marks[static_cast<std::size_t>(i)] =
        (i > 0 && lower_bounds[static_cast<std::size_t>(i)] != lower_bounds[static_cast<std::size_t>(i - 1)]) ? 1 : 0;
  });
  const std::vector<std::int64_t> scanned = inclusive_scan(marks);

  std::vector<std::int64_t> map(nodes.size());
  parallel_for(n, [&](std::int64_t i) {
    map[static_cast<std::size_t>(permutation[static_cast<std::size_t>(i)])] = scanned[static_cast<std::size_t>(i)];
  });
  return map;
}

namespace {

// Splits by cardinality; the first child gets ceil(size/2).
std::pair<Cluster, Cluster> split_cluster(Cluster c) {
  const std::int64_t mid = c.lower + (c.size() + 1) / 2;
  return {{c.lower, mid}, {mid, c.upper}};
}

void fill_side_boxes(std::span<WorkItem> level, const PointSet& points, ClusterSide side) {
  const std::vector<BoundingBox> table = compute_bounding_box_lookup_table(level, points, side);
  const std::vector<std::int64_t> map = create_map_for_bounding_boxes(level, side);
  parallel_for(static_cast<std::int64_t>(level.size()), [&](std::int64_t i) {
    const BoundingBox& box = table[static_cast<std::size_t>(map[static_cast<std::size_t>(i)])];
    if (side == ClusterSide::Row) {
      level[static_cast<std::size_t>(i)].box_row = box;
    } else {
      level[static_cast<std::size_t>(i)].box_col = box;
    }
  });
}

}  // namespace

std::vector<WorkItem> build_block_cluster_tree(const PointSet& points, const BlockTreeOptions& options) {
  if (points.count < 1) throw std::invalid_argument("build_block_cluster_tree: empty point set");
  if (options.c_leaf < 1) throw std::invalid_argument("build_block_cluster_tree: C_leaf must be >= 1");
  if (options.eta < 0.0) throw std::invalid_argument("build_block_cluster_tree: eta must be >= 0");

  OutputQueue<WorkItem> leaf_queue;

  const auto node_admissible = [&](const WorkItem& w) {
    switch (options.admissibility) {
      case AdmissibilityMode::ForceDense: return false;
      case AdmissibilityMode::ForceAdmissible: return true;
      case AdmissibilityMode::Geometric: break;
    }
    return is_admissible(w.box_row, w.box_col, options.eta);
  };
  const auto is_leaf = [&](const WorkItem& w) {
    return node_admissible(w) || w.row.size() <= options.c_leaf || w.col.size() <= options.c_leaf;
  };

  WorkItem root;
  root.row = {0, points.count};
  root.col = {0, points.count};

  const auto on_level = [&](std::span<WorkItem> level) {
    fill_side_boxes(level, points, ClusterSide::Row);
    fill_side_boxes(level, points, ClusterSide::Col);
    // every node of the level can emit at most one leaf
    leaf_queue.ensure_capacity(leaf_queue.size() + static_cast<std::int64_t>(level.size()));
  };
  const auto count_children = [&](const WorkItem& w) -> std::int64_t { return is_leaf(w) ? 0 : 4; };
  const auto emit_children = [&](const WorkItem& w, WorkItem* out) {
    if (is_leaf(w)) {
      WorkItem leaf = w;
      leaf.admissible = node_admissible(w);
      leaf_queue.put(leaf);
      return;
    }
    const auto [row_a, row_b] = split_cluster(w.row);
    const auto [col_a, col_b] = split_cluster(w.col);
    out[0].row = row_a; out[0].col = col_a;
    out[1].row = row_a; out[1].col = col_b;
    out[2].row = row_b; out[2].col = col_a;
    out[3].row = row_b; out[3].col = col_b;
  };

  traverse(root, count_children, emit_children, on_level);

  // The concurrent queue order depends on scheduling; canonicalize so that
  // setup and every product derived from the queue are run-to-run identical.
  std::vector<WorkItem> leaves = leaf_queue.take();
  std::sort(leaves.begin(), leaves.end(), [](const WorkItem& x, const WorkItem& y) {
    return std::tie(x.row.lower, x.row.upper, x.col.lower, x.col.upper) <
           std::tie(y.row.lower, y.row.upper, y.col.lower, y.col.upper);
  });
  return leaves;
}

void dump_leaves_csv(std::span<const WorkItem> leaves, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_leaves_csv: cannot open " + path);
  out << "row_lower,row_upper,col_lower,col_upper,admissible\n";
  for (const WorkItem& w : leaves) {
    out << w.row.lower << ',' << w.row.upper << ',' << w.col.lower << ',' << w.col.upper << ','
        << (w.admissible ? 1 : 0) << '\n';
  }
}

}  // namespace hmat
