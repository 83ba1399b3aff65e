#include <iostream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "evcp/commands.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Tape buffers are large and short-lived; keep them in the heap instead of
  // round-tripping through mmap on every forward pass.
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
  std::vector<std::string> args(argv + 1, argv + argc);
  return evcp::run_cli(args, std::cout, std::cerr);
}
