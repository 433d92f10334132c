#pragma once

#include "urgent/federation/federation.hpp"

#include <optional>
#include <string>
#include <vector>

namespace urgent::fed {

struct MatrixCell {
  std::size_t count = 0;
  std::optional<double> mean_coefficient;  // empty cell has no mean
};

/// Scheduling-coefficient matrix over (job size, runtime) buckets. Bucket
/// values are inclusive upper bounds; a record lands in the smallest node
/// bucket >= its node count and the smallest hour bucket >= its runtime in
/// hours. Records beyond the largest bucket on either axis are counted in
/// `overflow` and left out of the cells.
struct SchedulingMatrix {
  std::vector<double> node_buckets;
  std::vector<double> hour_buckets;
  std::vector<std::vector<MatrixCell>> cells;  // [node][hour]
  std::size_t overflow = 0;

  // Columns: node_bucket,hour_bucket,count,mean_coefficient (blank when empty).
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

SchedulingMatrix scheduling_matrix(const std::vector<SchedulingRecord>& records,
                                   const std::vector<double>& node_buckets,
                                   const std::vector<double>& hour_buckets);

}  // namespace urgent::fed
