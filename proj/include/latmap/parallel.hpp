#pragma once

#include <Eigen/Core>

#include <functional>

namespace latmap {

/// Upper bound on worker threads (>= 1). Initialized from LMAP_THREADS when
/// set, otherwise from the hardware concurrency.
int max_threads();
void set_max_threads(int n);

/// Runs body(i) for i in [0, n). Work items are independent; callers write
/// to disjoint outputs so results do not depend on the thread count.
void parallel_for(Eigen::Index n, const std::function<void(Eigen::Index)>& body);

}  // namespace latmap
