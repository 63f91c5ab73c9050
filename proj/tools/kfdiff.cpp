#include <iostream>

#include "kfdiff/cli.hpp"
#include "kfdiff/config.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return kfdiff::run_cli(args, std::cout, std::cerr, kfdiff::kfdiff_environment());
}
