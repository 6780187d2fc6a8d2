#include <iostream>

#include "paretoq/cli.hpp"

int main(int argc, char** argv) { return paretoq::cli_main(argc, argv, std::cout, std::cerr); }
