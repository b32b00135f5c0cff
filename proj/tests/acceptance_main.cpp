// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <cstring>
#include <iostream>

#include "gali/selftest.hpp"

int main(int argc, char** argv) {
  gali::selftest::Options opt;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--quick") == 0) opt.quick = true;
    if (std::strcmp(argv[i], "--artifacts") == 0 && i + 1 < argc) opt.artifacts_dir = argv[++i];
  }
  const auto results = gali::selftest::run_all(opt, std::cout);
  std::size_t passed = 0;
  for (const auto& r : results) passed += r.passed ? 1 : 0;
  std::cout << passed << "/" << results.size() << " acceptance criteria passed\n";
  return passed == results.size() ? 0 : 1;
}
