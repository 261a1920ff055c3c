#pragma once

#include <cstddef>
#include <functional>

namespace hjblab::parallel {

/// Worker count used by every fan-out in the library. Results never depend
/// on it: work items carry their own seeds and are reduced in index order.
void set_jobs(std::size_t jobs);
std::size_t jobs();

/// Runs body(i) for i in [0, n). Rethrows the exception of the lowest
/// failing index, so error reporting is as deterministic as the results.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace hjblab::parallel
