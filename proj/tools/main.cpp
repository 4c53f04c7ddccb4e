#include <iostream>

#include "topocontro/cli.hpp"

int main(int argc, char** argv) { return topocontro::run_cli(argc, argv, std::cout, std::cerr); }
