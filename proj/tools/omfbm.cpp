#include <iostream>

#include "omfbm/cli.hpp"

int main(int argc, char** argv) { return omfbm::cli::run_cli(argc, argv, std::cout, std::cerr); }
