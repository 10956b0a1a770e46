#include "pobj/apps/bfs.hpp"

#include <deque>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace pobj::apps {

// ---------------------------------------------------------------------------
// Graphs

std::uint64_t Graph::edge_count() const {
  std::uint64_t n = 0;
  for (const auto& row : adjacency) n += row.size();
  return n / 2;
}

bool Graph::has_edge(std::uint64_t u, std::uint64_t v) const {
  if (u >= vertices || v >= vertices) return false;
  const auto& row = adjacency[u];
  return std::binary_search(row.begin(), row.end(), v);
}

Graph graph_from_edges(std::uint64_t vertices,
                       const std::vector<std::pair<std::uint64_t, std::uint64_t>>& edges) {
  Graph g;
  g.vertices = vertices;
  g.adjacency.resize(vertices);
  for (const auto& [u, v] : edges) {
    if (u >= vertices || v >= vertices) {
      throw std::invalid_argument(fmt::format("edge ({}, {}) outside {} vertices", u, v, vertices));
    }
    if (u == v) continue;
    g.adjacency[u].push_back(v);
    g.adjacency[v].push_back(u);
  }
  for (auto& row : g.adjacency) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
  return g;
}

Graph random_graph(std::uint64_t vertices, double mean_degree, std::uint64_t seed) {
  if (vertices < 2) return graph_from_edges(vertices, {});
  const std::uint64_t possible = vertices * (vertices - 1) / 2;
  const auto target = std::min<std::uint64_t>(
      possible, static_cast<std::uint64_t>(static_cast<double>(vertices) * mean_degree / 2.0));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> pick(0, vertices - 1);
  std::set<std::pair<std::uint64_t, std::uint64_t>> chosen;
  while (chosen.size() < target) {
    std::uint64_t u = pick(rng);
    std::uint64_t v = pick(rng);
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    chosen.emplace(u, v);
  }
  return graph_from_edges(vertices, {chosen.begin(), chosen.end()});
}

Graph load_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open graph file " + path);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> edges;
  std::uint64_t max_id = 0;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::uint64_t u = 0;
    std::uint64_t v = 0;
    if (!(fields >> u >> v)) {
      throw std::runtime_error(fmt::format("{}:{}: expected 'u v'", path, number));
    }
    edges.emplace_back(u, v);
    max_id = std::max({max_id, u, v});
  }
  return graph_from_edges(edges.empty() ? 0 : max_id + 1, edges);
}

// ---------------------------------------------------------------------------
// GraphPart

GraphPart::GraphPart(std::uint64_t part, Partition partition,
                     std::vector<std::vector<std::uint64_t>> adjacency)
    : part_(part),
      partition_(partition),
      first_(partition.begin(part)),
      adjacency_(std::move(adjacency)) {
  if (adjacency_.size() != partition_.end(part) - first_) {
    throw std::invalid_argument("adjacency does not match the part's vertex range");
  }
  parent_.assign(adjacency_.size(), kNoParent);
  level_.assign(adjacency_.size(), -1);
}

void GraphPart::set_parts(std::vector<Remote<GraphPart>> parts) {
  std::lock_guard lock(mu_);
  parts_ = std::move(parts);
}

void GraphPart::init(std::uint64_t root) {
  std::lock_guard lock(mu_);
  std::fill(parent_.begin(), parent_.end(), kNoParent);
  std::fill(level_.begin(), level_.end(), -1);
  frontier_[0].clear();
  frontier_[1].clear();
  if (partition_.owner(root) == part_) {
    parent_[root - first_] = static_cast<std::int64_t>(root);
    level_[root - first_] = 0;
    frontier_[0].push_back(root);
  }
}

std::vector<EdgeList> GraphPart::sort_frontier_edges(std::uint64_t iteration) {
  std::lock_guard lock(mu_);
  std::vector<EdgeList> lists(partition_.parts);
  auto& frontier = frontier_[iteration % 2];
  for (std::uint64_t v : frontier) {
    for (std::uint64_t w : adjacency_[v - first_]) {
      lists[partition_.owner(w)].edges.emplace_back(v, w);
    }
  }
  frontier.clear();
  return lists;
}

void GraphPart::expand(std::uint64_t iteration) {
  auto lists = sort_frontier_edges(iteration);
  barrier_scope([&] {
    for (std::uint64_t q = 0; q < partition_.parts; ++q) {
      call(parts_[q], kSetParents, std::move(lists[q]), iteration);
    }
  }, "set_parents");
}

void GraphPart::set_parents(EdgeList edges, std::uint64_t iteration) {
  std::lock_guard lock(mu_);
  auto& next = frontier_[(iteration + 1) % 2];
  for (const auto& [v, w] : edges.edges) {
    if (partition_.owner(w) != part_) {
      throw std::invalid_argument(fmt::format("vertex {} is not owned by part {}", w, part_));
    }
    auto& p = parent_[w - first_];
    // Several frontier vertices may claim w in one iteration; keeping the
    // smallest makes the tree independent of arrival order.
    if (p != kNoParent) {
      if (level_[w - first_] == static_cast<std::int64_t>(iteration + 1)) {
        p = std::min(p, static_cast<std::int64_t>(v));
      }
      continue;
    }
    p = static_cast<std::int64_t>(v);
    level_[w - first_] = static_cast<std::int64_t>(iteration + 1);
    next.push_back(w);
  }
}

bool GraphPart::is_empty_frontier(std::uint64_t buffer) {
  std::lock_guard lock(mu_);
  return frontier_[buffer % 2].empty();
}

bool GraphPart::check_finished(std::uint64_t iteration) {
  std::vector<Future<bool>> empty(partition_.parts);
  for (std::uint64_t q = 0; q < partition_.parts; ++q) {
    empty[q] = call(parts_[q], kIsEmptyFrontier, iteration + 1);
  }
  bool finished = true;
  for (auto& e : empty) finished = e.get() && finished;
  return finished;
}

std::vector<std::int64_t> GraphPart::parents() {
  std::lock_guard lock(mu_);
  return parent_;
}

std::vector<std::int64_t> GraphPart::levels() {
  std::lock_guard lock(mu_);
  return level_;
}

void register_bfs(KindRegistry& registry) {
  KindBuilder(kGraphPart, "GraphPart")
      .method(kSetParts, "set_parts")
      .method(kInit, "init")
      .method(kExpand, "expand")
      .method(kSetParents, "set_parents")
      .method(kCheckFinished, "check_finished")
      .method(kIsEmptyFrontier, "is_empty_frontier")
      .method(kParents, "parents")
      .method(kLevels, "levels")
      .concurrent()  // parts call themselves during expand/check_finished
      .register_in(registry);
}

// ---------------------------------------------------------------------------
// Driver

BfsResult graph_build_tree(const Graph& graph, std::uint64_t parts, std::size_t hosts,
                           std::uint64_t root) {
  if (root >= graph.vertices) {
    throw std::invalid_argument(fmt::format("root {} outside {} vertices", root, graph.vertices));
  }
  parts = std::max<std::uint64_t>(1, std::min(parts, graph.vertices));
  hosts = std::max<std::size_t>(1, hosts);
  const Partition partition{graph.vertices, parts};

  std::vector<Future<AgentAddress>> host(hosts);
  for (std::size_t h = 0; h < hosts; ++h) host[h] = create_host("host" + std::to_string(h));

  std::vector<Future<Remote<GraphPart>>> pending(parts);
  for (std::uint64_t p = 0; p < parts; ++p) {
    std::vector<std::vector<std::uint64_t>> rows(
        graph.adjacency.begin() + static_cast<std::ptrdiff_t>(partition.begin(p)),
        graph.adjacency.begin() + static_cast<std::ptrdiff_t>(partition.end(p)));
    pending[p] = construct(kGraphPart, host[p % hosts].get(), p, partition, std::move(rows));
  }
  std::vector<Remote<GraphPart>> part(parts);
  for (std::uint64_t p = 0; p < parts; ++p) part[p] = pending[p].get();

  barrier_scope([&] {
    for (auto& p : part) {
      call(p, kSetParts, part);
      call(p, kInit, root);
    }
  });

  // Iterations causally depend on `finished`, so they never overlap.
  BfsResult result;
  bool finished = false;
  std::uint64_t iteration = 0;
  while (!finished) {
    barrier_scope([&] {
      for (auto& p : part) call(p, kExpand, iteration);
    }, "expand");
    std::vector<Future<bool>> done(parts);
    barrier_scope([&] {
      for (std::uint64_t p = 0; p < parts; ++p) done[p] = call(part[p], kCheckFinished, iteration);
    }, "check_finished");
    finished = true;
    for (auto& d : done) finished = d.get() && finished;
    ++iteration;
  }
  result.iterations = iteration;

  std::vector<Future<std::vector<std::int64_t>>> parents(parts);
  std::vector<Future<std::vector<std::int64_t>>> levels(parts);
  for (std::uint64_t p = 0; p < parts; ++p) {
    parents[p] = call(part[p], kParents);
    levels[p] = call(part[p], kLevels);
  }
  for (std::uint64_t p = 0; p < parts; ++p) {
    auto ps = parents[p].get();
    auto ls = levels[p].get();
    result.parents.insert(result.parents.end(), ps.begin(), ps.end());
    result.levels.insert(result.levels.end(), ls.begin(), ls.end());
  }
  for (auto& p : part) destroy(p);
  return result;
}

std::vector<std::int64_t> bfs_levels_oracle(const Graph& graph, std::uint64_t root) {
  std::vector<std::int64_t> level(graph.vertices, -1);
  if (root >= graph.vertices) return level;
  std::deque<std::uint64_t> queue{root};
  level[root] = 0;
  while (!queue.empty()) {
    const auto v = queue.front();
    queue.pop_front();
    for (auto w : graph.adjacency[v]) {
      if (level[w] < 0) {
        level[w] = level[v] + 1;
        queue.push_back(w);
      }
    }
  }
  return level;
}

BfsReport bfs_validate(const Graph& graph, const std::vector<std::int64_t>& parents,
                       std::uint64_t root) {
  BfsReport report;
  auto fail = [&](std::string text) {
    if (report.failures.size() < 50) report.failures.push_back(std::move(text));
  };
  if (parents.size() != graph.vertices) {
    fail(fmt::format("parent array has {} entries for {} vertices", parents.size(),
                     graph.vertices));
    return report;
  }
  const auto oracle = bfs_levels_oracle(graph, root);

  // 1. root is its own parent
  if (root >= graph.vertices || parents[root] != static_cast<std::int64_t>(root)) {
    fail(fmt::format("root {} is not its own parent", root));
  }

  // 2. every tree edge exists in the graph
  for (std::uint64_t v = 0; v < graph.vertices; ++v) {
    const auto p = parents[v];
    if (p == kNoParent || v == root) continue;
    if (p < 0 || !graph.has_edge(static_cast<std::uint64_t>(p), v)) {
      fail(fmt::format("tree edge ({}, {}) does not exist in the graph", p, v));
    }
  }

  // 3. level(child) = level(parent) + 1, with levels derived from the tree.
  std::vector<std::int64_t> depth(graph.vertices, -2);  // -2 unknown, -3 visiting
  std::function<std::int64_t(std::uint64_t)> depth_of = [&](std::uint64_t v) -> std::int64_t {
    std::vector<std::uint64_t> chain;
    std::uint64_t cur = v;
    while (depth[cur] == -2) {
      if (parents[cur] == kNoParent) {
        depth[cur] = -1;
        break;
      }
      if (cur == root) {
        depth[cur] = 0;
        break;
      }
      depth[cur] = -3;
      chain.push_back(cur);
      const auto p = parents[cur];
      if (p < 0 || static_cast<std::uint64_t>(p) >= graph.vertices) {
        depth[cur] = -1;
        chain.pop_back();
        break;
      }
      cur = static_cast<std::uint64_t>(p);
    }
    std::int64_t d = depth[cur] == -3 ? -1 : depth[cur];
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      d = d < 0 ? -1 : d + 1;
      depth[*it] = d;
    }
    return depth[v];
  };
  for (std::uint64_t v = 0; v < graph.vertices; ++v) {
    if (parents[v] == kNoParent || v == root) continue;
    const auto d = depth_of(v);
    if (d < 0) {
      fail(fmt::format("vertex {} does not lead back to the root", v));
      continue;
    }
    const auto dp = depth_of(static_cast<std::uint64_t>(parents[v]));
    if (d != dp + 1) {
      fail(fmt::format("level of {} is {}, parent {} has level {}", v, d, parents[v], dp));
    }
    if (d != oracle[v]) {
      fail(fmt::format("vertex {} at tree level {}, shortest distance {}", v, d, oracle[v]));
    }
  }

  // 4. parent set exactly for the vertices reachable from the root
  for (std::uint64_t v = 0; v < graph.vertices; ++v) {
    const bool reachable = oracle[v] >= 0;
    const bool has_parent = parents[v] != kNoParent;
    if (reachable != has_parent) {
      fail(fmt::format("vertex {} is {}reachable but {} a parent", v, reachable ? "" : "not ",
                       has_parent ? "has" : "lacks"));
    }
  }

  for (auto l : oracle) {
    if (l < 0) continue;
    if (report.level_histogram.size() <= static_cast<std::size_t>(l)) {
      report.level_histogram.resize(l + 1);
    }
    ++report.level_histogram[l];
  }
  return report;
}

}  // namespace pobj::apps
