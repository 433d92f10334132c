#include "urgent/federation/matrix.hpp"

#include "urgent/error.hpp"

#include <algorithm>
#include <sstream>

namespace urgent::fed {

namespace {

void require_monotone(const std::vector<double>& buckets, const char* axis) {
  require(!buckets.empty(), std::string(axis) + " buckets must be non-empty");
  for (std::size_t i = 1; i < buckets.size(); ++i)
    require(buckets[i] > buckets[i - 1], std::string(axis) + " buckets must increase");
}

std::optional<std::size_t> bucket_of(const std::vector<double>& buckets, double value) {
  auto it = std::lower_bound(buckets.begin(), buckets.end(), value);
  if (it == buckets.end()) return std::nullopt;
  return static_cast<std::size_t>(it - buckets.begin());
}

std::string format_number(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

SchedulingMatrix scheduling_matrix(const std::vector<SchedulingRecord>& records,
                                   const std::vector<double>& node_buckets,
                                   const std::vector<double>& hour_buckets) {
  require_monotone(node_buckets, "node");
  require_monotone(hour_buckets, "hour");
  SchedulingMatrix m;
  m.node_buckets = node_buckets;
  m.hour_buckets = hour_buckets;
  m.cells.assign(node_buckets.size(), std::vector<MatrixCell>(hour_buckets.size()));
  std::vector<std::vector<double>> sums(node_buckets.size(),
                                        std::vector<double>(hour_buckets.size(), 0.0));
  for (const auto& r : records) {
    const auto ni = bucket_of(node_buckets, r.nodes);
    const auto hi = bucket_of(hour_buckets, r.runtime_s / 3600.0);
    if (!ni || !hi) {
      ++m.overflow;
      continue;
    }
    ++m.cells[*ni][*hi].count;
    sums[*ni][*hi] += r.coefficient;
  }
  for (std::size_t i = 0; i < node_buckets.size(); ++i)
    for (std::size_t j = 0; j < hour_buckets.size(); ++j)
      if (m.cells[i][j].count > 0)
        m.cells[i][j].mean_coefficient = sums[i][j] / static_cast<double>(m.cells[i][j].count);
  return m;
}

std::string SchedulingMatrix::to_csv() const {
  std::ostringstream out;
  out << "node_bucket,hour_bucket,count,mean_coefficient\n";
  for (std::size_t i = 0; i < node_buckets.size(); ++i) {
    for (std::size_t j = 0; j < hour_buckets.size(); ++j) {
      const auto& c = cells[i][j];
      out << format_number(node_buckets[i]) << ',' << format_number(hour_buckets[j]) << ','
          << c.count << ',';
      if (c.mean_coefficient) out << format_number(*c.mean_coefficient);
      out << '\n';
    }
  }
  return out.str();
}

nlohmann::json SchedulingMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < node_buckets.size(); ++i) {
    for (std::size_t j = 0; j < hour_buckets.size(); ++j) {
      const auto& c = cells[i][j];
      rows.push_back({{"node_bucket", node_buckets[i]},
                      {"hour_bucket", hour_buckets[j]},
                      {"count", c.count},
                      {"mean_coefficient", c.mean_coefficient ? nlohmann::json(*c.mean_coefficient)
                                                              : nlohmann::json(nullptr)}});
    }
  }
  return {{"cells", std::move(rows)}, {"overflow", overflow}};
}

}  // namespace urgent::fed
