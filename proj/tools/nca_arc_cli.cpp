#include <iostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "nca_arc/cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Rollout buffers are large and short-lived; keep them on the heap instead
  // of paying an mmap/munmap and page faults on every step.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  std::vector<std::string> args(argv + 1, argv + argc);
  return nca_arc::cli_main(args, std::cout, std::cerr);
}
