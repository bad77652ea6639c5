#include <iostream>

#include "essaylens/gateway.hpp"

int main(int argc, char** argv) {
  return essaylens::gateway::cli_main(argc, argv, std::cout, std::cerr);
}
