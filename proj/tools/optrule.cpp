#include <iostream>
#include <string>
#include <vector>

#include "optrule/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return optrule::run(args, std::cout, std::cerr);
}
