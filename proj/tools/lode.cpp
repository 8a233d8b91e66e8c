#include <iostream>

#include "lode/cli.hpp"

int main(int argc, char** argv) {
  return lode::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
