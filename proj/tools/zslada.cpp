#include "zslada/cli/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  try {
    return zslada::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
