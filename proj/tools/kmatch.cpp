#include "kmatch/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  return kmatch::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
