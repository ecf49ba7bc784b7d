#include <iostream>

#include "latmap/cli.hpp"

int main(int argc, char** argv) { return latmap::cli::run(argc, argv, std::cout, std::cerr); }
