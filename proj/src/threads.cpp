#include "fishcore/threads.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fishcore {

int apply_thread_cap_from_env() {
#ifdef _OPENMP
    const char* raw = std::getenv("FISHCORE_THREADS");
    if (raw != nullptr) {
        int cap = 0;
        try {
            cap = std::stoi(raw);
        } catch (...) {
            cap = 0;
        }
        // A cap only ever lowers the budget.
        if (cap >= 1 && cap < omp_get_max_threads()) {
            omp_set_num_threads(cap);
        }
    }
    return omp_get_max_threads();
#else
    return 1;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace fishcore
