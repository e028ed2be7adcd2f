#include "asbd/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return asbd::run_cli(argc, argv, std::cin, std::cout, std::cerr); }
