#include <iostream>
#include <string>
#include <vector>

#include "mtdon/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mtdon::run(args, std::cout, std::cerr);
}
