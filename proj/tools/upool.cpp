#include <iostream>

#include "upool/cli.hpp"

int main(int argc, char **argv) {
  return upool::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
