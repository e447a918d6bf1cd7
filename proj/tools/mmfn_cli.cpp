#include <iostream>
#include <string>
#include <vector>

#include "mmfn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return mmfn::cli::run(args, std::cout, std::cerr);
}
