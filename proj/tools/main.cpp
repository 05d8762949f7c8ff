#include <iostream>

#include "popinterp/cli.hpp"

int main(int argc, char** argv) { return popinterp::run_cli(argc, argv, std::cout, std::cerr); }
