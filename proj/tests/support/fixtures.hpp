#pragma once

#include "urgent/model/ensemble.hpp"
#include "urgent/model/grid.hpp"
#include "urgent/tda/persistence.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace testing {

namespace fs = std::filesystem;
using urgent::model::ScalarGrid;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("urgent-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  fs::path path_;
};

inline ScalarGrid grid_of(int cols, int rows, std::vector<double> values) {
  ScalarGrid g(cols, rows);
  g.values = std::move(values);
  return g;
}

// Warm, wet, populated scenario with smooth spatial and daily variation.
inline urgent::model::ScenarioInputs warm_scenario(int cols, int rows, int days,
                                                   double x0 = 0.0, double y0 = 0.0) {
  urgent::model::ScenarioInputs in;
  auto base = [&](double fill) {
    ScalarGrid g(cols, rows, fill);
    g.x_origin = x0;
    g.y_origin = y0;
    return g;
  };
  for (int d = 0; d < days; ++d) {
    ScalarGrid t = base(0.0), p = base(0.0);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        t.at(c, r) = 18.0 + 6.0 * std::sin(0.3 * c + 0.2 * d) + 0.25 * r;
        p.at(c, r) = 4.0 + 3.0 * std::cos(0.4 * r - 0.15 * d) + 0.1 * c;
      }
    in.temperature.push_back(t);
    in.precipitation.push_back(p);
  }
  in.human_density = base(0.0);
  in.gdp = base(1.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) in.human_density.at(c, r) = 800.0 + 150.0 * ((c * 7 + r * 3) % 11);
  return in;
}

// Exhaustive superlevel-set persistence: for every prefix of the filtration
// order the connected components are recomputed from scratch by flood fill,
// and merges are read off by comparing consecutive prefixes.
struct OraclePair {
  double birth;
  double death;
  std::int64_t cell;
  bool essential;
  bool operator<(const OraclePair& o) const {
    return std::tie(cell, birth, death, essential) < std::tie(o.cell, o.birth, o.death, o.essential);
  }
  bool operator==(const OraclePair& o) const {
    return cell == o.cell && birth == o.birth && death == o.death && essential == o.essential;
  }
};

inline std::vector<int> flood_labels(const ScalarGrid& g, const std::vector<char>& in_set) {
  std::vector<int> label(g.size(), -1);
  int next = 0;
  for (std::size_t s = 0; s < g.size(); ++s) {
    if (!in_set[s] || label[s] >= 0) continue;
    std::queue<std::size_t> q;
    q.push(s);
    label[s] = next;
    while (!q.empty()) {
      const std::size_t v = q.front();
      q.pop();
      const int c = static_cast<int>(v % g.ncols), r = static_cast<int>(v / g.ncols);
      const int dc[] = {1, -1, 0, 0}, dr[] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int nc = c + dc[k], nr = r + dr[k];
        if (nc < 0 || nr < 0 || nc >= g.ncols || nr >= g.nrows) continue;
        const std::size_t u = g.index(nc, nr);
        if (in_set[u] && label[u] < 0) {
          label[u] = next;
          q.push(u);
        }
      }
    }
    ++next;
  }
  return label;
}

inline std::vector<OraclePair> oracle_persistence(const ScalarGrid& g) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!g.is_nodata(i)) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return g.values[a] != g.values[b] ? g.values[a] > g.values[b] : a < b;
  });
  std::vector<std::size_t> rank(g.size(), SIZE_MAX);
  for (std::size_t k = 0; k < order.size(); ++k) rank[order[k]] = k;

  std::vector<OraclePair> pairs;
  std::vector<char> in_set(g.size(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto before = flood_labels(g, in_set);
    const std::size_t v = order[k];
    // Peaks (earliest vertex in the order) of the components touching v.
    std::map<int, std::size_t> peak_of;
    for (std::size_t u = 0; u < g.size(); ++u)
      if (before[u] >= 0) {
        auto [it, fresh] = peak_of.emplace(before[u], u);
        if (!fresh && rank[u] < rank[it->second]) it->second = u;
      }
    std::set<std::size_t> touching;
    const int c = static_cast<int>(v % g.ncols), r = static_cast<int>(v / g.ncols);
    const int dc[] = {1, -1, 0, 0}, dr[] = {0, 0, 1, -1};
    for (int n = 0; n < 4; ++n) {
      const int nc = c + dc[n], nr = r + dr[n];
      if (nc < 0 || nr < 0 || nc >= g.ncols || nr >= g.nrows) continue;
      const std::size_t u = g.index(nc, nr);
      if (before[u] >= 0) touching.insert(peak_of.at(before[u]));
    }
    if (touching.size() > 1) {
      const std::size_t elder = *std::min_element(
          touching.begin(), touching.end(), [&](auto a, auto b) { return rank[a] < rank[b]; });
      for (std::size_t p : touching)
        if (p != elder)
          pairs.push_back({g.values[p], g.values[v], static_cast<std::int64_t>(p), false});
    }
    in_set[v] = 1;
  }
  const auto final_labels = flood_labels(g, in_set);
  std::map<int, std::pair<std::size_t, double>> comps;  // label -> (peak, min)
  for (std::size_t u = 0; u < g.size(); ++u) {
    if (final_labels[u] < 0) continue;
    auto [it, fresh] = comps.emplace(final_labels[u], std::make_pair(u, g.values[u]));
    if (!fresh) {
      if (rank[u] < rank[it->second.first]) it->second.first = u;
      it->second.second = std::min(it->second.second, g.values[u]);
    }
  }
  for (const auto& [label, pm] : comps)
    pairs.push_back({g.values[pm.first], pm.second, static_cast<std::int64_t>(pm.first), true});
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

inline std::vector<OraclePair> as_oracle_pairs(const urgent::tda::PersistenceDiagram& d) {
  std::vector<OraclePair> out;
  for (const auto& p : d.pairs) out.push_back({p.birth, p.death, p.cell, p.essential});
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace testing
