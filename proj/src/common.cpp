#include "kmatch/common.hpp"

#include <omp.h>

#include <atomic>
#include <iostream>

namespace kmatch {

namespace {
std::atomic<bool> g_quiet{false};
}

void log_warning(const std::string& message) {
  if (!g_quiet.load()) std::cerr << "warning: " << message << '\n';
}

void set_quiet(bool quiet) { g_quiet.store(quiet); }

int max_threads() { return omp_get_max_threads(); }

void set_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

}  // namespace kmatch
