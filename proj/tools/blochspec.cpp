#include <iostream>
#include <string>
#include <vector>

#include "blochspec/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return blochspec::run(args, std::cout, std::cerr);
}
