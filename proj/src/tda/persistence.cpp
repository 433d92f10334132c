#include "urgent/tda/persistence.hpp"

#include "urgent/error.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace urgent::tda {

GridMeta meta_of(const ScalarGrid& g) {
  return GridMeta{g.ncols, g.nrows, g.x_origin, g.y_origin, g.cell_size_m};
}

void canonical_sort(std::vector<PersistencePair>& pairs) {
  std::sort(pairs.begin(), pairs.end(), [](const PersistencePair& a, const PersistencePair& b) {
    if (a.persistence() != b.persistence()) return a.persistence() > b.persistence();
    if (a.cell != b.cell) return a.cell < b.cell;
    return a.birth > b.birth;
  });
}

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  // Attaches `child`'s root under `root`.
  void attach(std::size_t child, std::size_t root) { parent_[find(child)] = root; }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

PersistenceDiagram persistence_maxima(const ScalarGrid& grid, std::string time_label) {
  grid.validate();
  const std::size_t n = grid.size();
  const auto& v = grid.values;

  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (!grid.is_nodata(i)) order.push_back(i);
  if (order.empty()) fail(ErrorCode::EmptyDomain, "grid has no data cells");

  auto higher = [&v](std::size_t a, std::size_t b) {
    return v[a] > v[b] || (v[a] == v[b] && a < b);
  };
  std::sort(order.begin(), order.end(), higher);

  DisjointSets sets(n);
  std::vector<std::size_t> peak(n);
  std::vector<char> seen(n, 0);
  PersistenceDiagram out;
  out.grid = meta_of(grid);
  out.time_label = std::move(time_label);

  const int cols = grid.ncols;
  const int rows = grid.nrows;
  std::vector<std::size_t> roots;
  for (const std::size_t x : order) {
    const int c = static_cast<int>(x % cols);
    const int r = static_cast<int>(x / cols);
    roots.clear();
    auto visit = [&](int nc, int nr) {
      if (nc < 0 || nr < 0 || nc >= cols || nr >= rows) return;
      const std::size_t y = grid.index(nc, nr);
      if (!seen[y]) return;
      const std::size_t root = sets.find(y);
      if (std::find(roots.begin(), roots.end(), root) == roots.end()) roots.push_back(root);
    };
    visit(c - 1, r);
    visit(c + 1, r);
    visit(c, r - 1);
    visit(c, r + 1);
    seen[x] = 1;

    if (roots.empty()) {
      peak[x] = x;
      continue;
    }
    std::size_t elder = roots.front();
    for (const std::size_t root : roots)
      if (higher(peak[root], peak[elder])) elder = root;
    for (const std::size_t root : roots) {
      if (root == elder) continue;
      out.pairs.push_back(PersistencePair{v[peak[root]], v[x],
                                          static_cast<std::int64_t>(peak[root]), false});
      sets.attach(root, elder);
    }
    sets.attach(x, elder);
  }

  // One essential pair per connected component of the domain.
  std::vector<double> comp_min(n, std::numeric_limits<double>::infinity());
  for (const std::size_t x : order) {
    const std::size_t root = sets.find(x);
    comp_min[root] = std::min(comp_min[root], v[x]);
  }
  for (const std::size_t x : order) {
    if (sets.find(x) != x) continue;
    out.pairs.push_back(
        PersistencePair{v[peak[x]], comp_min[x], static_cast<std::int64_t>(peak[x]), true});
  }
  canonical_sort(out.pairs);
  return out;
}

PersistenceDiagram threshold_diagram(const PersistenceDiagram& d, double tau) {
  require(tau >= 0.0, "persistence threshold must be non-negative");
  PersistenceDiagram out = d;
  out.pairs.clear();
  for (const auto& p : d.pairs)
    if (p.essential || p.persistence() >= tau) out.pairs.push_back(p);
  return out;
}

std::vector<MaximaBar> top_k_maxima(const PersistenceDiagram& d, std::size_t k) {
  std::vector<MaximaBar> bars;
  const std::size_t n = std::min(k, d.pairs.size());
  bars.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = d.pairs[i];
    MaximaBar b;
    if (p.cell != kNoCell && d.grid.ncols > 0) {
      b.cell_x = static_cast<int>(p.cell % d.grid.ncols);
      b.cell_y = static_cast<int>(p.cell / d.grid.ncols);
    }
    b.value = p.birth;
    b.persistence = p.persistence();
    bars.push_back(b);
  }
  return bars;
}

nlohmann::json diagram_to_json(const PersistenceDiagram& d) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : d.pairs) {
    int x = -1, y = -1;
    if (p.cell != kNoCell && d.grid.ncols > 0) {
      x = static_cast<int>(p.cell % d.grid.ncols);
      y = static_cast<int>(p.cell / d.grid.ncols);
    }
    pairs.push_back({{"birth", p.birth},
                     {"death", p.death},
                     {"cell_x", x},
                     {"cell_y", y},
                     {"persistence", p.persistence()},
                     {"essential", p.essential}});
  }
  return {{"time_label", d.time_label},
          {"pairs", std::move(pairs)},
          {"grid",
           {{"ncols", d.grid.ncols},
            {"nrows", d.grid.nrows},
            {"xllcorner", d.grid.x_origin},
            {"yllcorner", d.grid.y_origin},
            {"cellsize", d.grid.cell_size_m}}}};
}

PersistenceDiagram diagram_from_json(const nlohmann::json& j) {
  PersistenceDiagram d;
  d.time_label = j.value("time_label", "");
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    d.grid = GridMeta{g.at("ncols"), g.at("nrows"), g.at("xllcorner"), g.at("yllcorner"),
                      g.at("cellsize")};
  }
  for (const auto& p : j.at("pairs")) {
    PersistencePair pair;
    pair.birth = p.at("birth");
    pair.death = p.at("death");
    pair.essential = p.value("essential", false);
    const int x = p.value("cell_x", -1);
    const int y = p.value("cell_y", -1);
    if (x >= 0 && y >= 0 && d.grid.ncols > 0)
      pair.cell = static_cast<std::int64_t>(y) * d.grid.ncols + x;
    d.pairs.push_back(pair);
  }
  canonical_sort(d.pairs);
  return d;
}

}  // namespace urgent::tda
