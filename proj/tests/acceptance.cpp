// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exit status is 0 only when all pass. Progress of the end-to-end suite goes to stderr.

#include <cstdio>
#include <cstring>
#include <vector>

#include "edgecl/selfcheck.hpp"

int main(int argc, char** argv) {
  std::vector<int> ids = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  // --quick skips the two criteria that need the desk-scale benchmark suite.
  if (argc > 1 && std::strcmp(argv[1], "--quick") == 0) ids = {1, 2, 3, 4, 5, 6, 7, 9};

  const auto log = [](const std::string& line) { std::fprintf(stderr, "  %s\n", line.c_str()); };
  const auto results = edgecl::selfcheck::run(ids, log);
  std::size_t passed = 0;
  for (const auto& r : results) {
    std::printf("%s\n", edgecl::selfcheck::format(r).c_str());
    passed += r.passed;
  }
  std::printf("%zu/%zu criteria passed\n", passed, results.size());
  std::fflush(stdout);
  return passed == results.size() ? 0 : 1;
}
