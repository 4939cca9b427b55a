#pragma once

#include <cstdint>

#include "evgraph/events.hpp"

namespace evg {

struct SamplingConfig {
  int k = 8;                   ///< maximum events per leaf volume
  std::uint64_t seed = 0;
  int min_cell_xy = 1;         ///< smallest leaf extent in pixels
  std::int64_t min_cell_t = 1; ///< smallest leaf extent in microseconds

  void validate() const;
};

/// Non-uniform grid sampling.
///
/// The (x, y, t) bounding volume of the stream is bisected into octants until
/// each leaf holds at most `k` events or has reached the minimum cell size.
/// Every non-empty leaf contributes exactly one of its events, picked
/// uniformly at random. Events that lie on a bisection plane belong to the
/// lower octant. The result is a time-ordered subset of the input.
EventStream nonuniform_sample(const EventStream& stream, const SamplingConfig& cfg);

}  // namespace evg
