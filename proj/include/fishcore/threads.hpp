#pragma once

namespace fishcore {

// Applies the FISHCORE_THREADS environment variable, if set, as an upper
// bound on OpenMP parallelism. Returns the effective thread count.
int apply_thread_cap_from_env();

// Current OpenMP thread budget (1 when built without OpenMP).
int max_threads();

} // namespace fishcore
