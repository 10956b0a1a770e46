#pragma once

// Level-synchronous BFS over a block-partitioned graph. Each GraphPart owns
// a contiguous vertex range; per iteration every part sorts its frontier's
// edges by owner and sends one EdgeList to every part inside a barrier, then
// the driver asks every part whether all next frontiers are empty.

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "pobj/api.hpp"
#include "pobj/kind.hpp"

namespace pobj::apps {

inline constexpr std::int64_t kNoParent = -1;

struct Graph {
  std::uint64_t vertices = 0;
  std::vector<std::vector<std::uint64_t>> adjacency;  // undirected, both directions

  std::uint64_t edge_count() const;  // undirected edges
  bool has_edge(std::uint64_t u, std::uint64_t v) const;
};

/// Erdős–Rényi G(n, m) with m = n * degree / 2 distinct edges, no loops.
Graph random_graph(std::uint64_t vertices, double mean_degree, std::uint64_t seed);
Graph graph_from_edges(std::uint64_t vertices,
                       const std::vector<std::pair<std::uint64_t, std::uint64_t>>& edges);
/// Reads "u v" lines; the vertex count is one past the largest id.
Graph load_edge_list(const std::string& path);

/// Block partition: part p owns [p * B, (p + 1) * B) with B = ceil(V / N).
struct Partition {
  std::uint64_t vertices = 0;
  std::uint64_t parts = 1;

  std::uint64_t block() const { return (vertices + parts - 1) / parts; }
  std::uint64_t owner(std::uint64_t v) const { return v / block(); }
  std::uint64_t begin(std::uint64_t p) const { return std::min(vertices, p * block()); }
  std::uint64_t end(std::uint64_t p) const { return std::min(vertices, (p + 1) * block()); }

  template <class Archive>
  void serialize(Archive& ar) {
    ar(vertices, parts);
  }
};

struct EdgeList {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> edges;  // (parent, child)

  template <class Archive>
  void serialize(Archive& ar) {
    ar(edges);
  }
};

class GraphPart {
 public:
  GraphPart(std::uint64_t part, Partition partition,
            std::vector<std::vector<std::uint64_t>> adjacency);

  void set_parts(std::vector<Remote<GraphPart>> parts);
  /// Resets state; the owner of `root` seeds the frontier of iteration 0.
  void init(std::uint64_t root);
  /// SortFrontierEdges, then SetParents on every part inside a barrier.
  void expand(std::uint64_t iteration);
  void set_parents(EdgeList edges, std::uint64_t iteration);
  /// ANDs is_empty_frontier over all parts for the next iteration's buffer.
  bool check_finished(std::uint64_t iteration);
  bool is_empty_frontier(std::uint64_t buffer);

  std::vector<std::int64_t> parents();
  std::vector<std::int64_t> levels();

  std::vector<EdgeList> sort_frontier_edges(std::uint64_t iteration);

 private:
  std::uint64_t part_;
  Partition partition_;
  std::uint64_t first_;
  std::vector<std::vector<std::uint64_t>> adjacency_;
  std::vector<Remote<GraphPart>> parts_;

  std::mutex mu_;
  std::vector<std::int64_t> parent_;
  std::vector<std::int64_t> level_;
  std::vector<std::uint64_t> frontier_[2];  // indexed by iteration parity
};

inline constexpr Kind<GraphPart, std::uint64_t, Partition, std::vector<std::vector<std::uint64_t>>>
    kGraphPart{200};
inline constexpr Method<&GraphPart::set_parts> kSetParts{1};
inline constexpr Method<&GraphPart::init> kInit{2};
inline constexpr Method<&GraphPart::expand> kExpand{3};
inline constexpr Method<&GraphPart::set_parents> kSetParents{4};
inline constexpr Method<&GraphPart::check_finished> kCheckFinished{5};
inline constexpr Method<&GraphPart::is_empty_frontier> kIsEmptyFrontier{6};
inline constexpr Method<&GraphPart::parents> kParents{7};
inline constexpr Method<&GraphPart::levels> kLevels{8};

void register_bfs(KindRegistry& registry);

struct BfsResult {
  std::vector<std::int64_t> parents;
  std::vector<std::int64_t> levels;
  std::uint64_t iterations = 0;
};

/// Runs inside an activity: distributes the graph over `parts` parts on
/// hosts "host<p mod hosts>", builds the tree from `root`, gathers results.
BfsResult graph_build_tree(const Graph& graph, std::uint64_t parts, std::size_t hosts,
                           std::uint64_t root);

/// Sequential BFS levels (-1 when unreachable).
std::vector<std::int64_t> bfs_levels_oracle(const Graph& graph, std::uint64_t root);

struct BfsReport {
  std::vector<std::string> failures;
  std::vector<std::uint64_t> level_histogram;
  bool ok() const { return failures.empty(); }
};

/// Graph500-style checks: root is its own parent, tree edges exist,
/// level(child) = level(parent) + 1, parent set exactly for reachable vertices.
/// Also compares the tree's levels against the oracle.
BfsReport bfs_validate(const Graph& graph, const std::vector<std::int64_t>& parents,
                       std::uint64_t root);

}  // namespace pobj::apps
