#include "mosformer/common.hpp"

#include <cstdlib>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mosf {

namespace {

int resolve_initial_threads() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("MOSF_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) n = static_cast<int>(v);
    }
    return n;
}

int g_max_threads = resolve_initial_threads();

}  // namespace

int max_threads() { return g_max_threads; }

void set_max_threads(int n) {
    if (n < 1) n = 1;
    g_max_threads = n;
#ifdef _OPENMP
    omp_set_num_threads(n);
#endif
}

}  // namespace mosf
