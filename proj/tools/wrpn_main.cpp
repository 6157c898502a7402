#include <iostream>
#include <string>
#include <vector>

#include "wrpn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return wrpn::cli_dispatch(args, std::cout, std::cerr);
}
