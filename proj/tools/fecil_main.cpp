#include <iostream>

#include "fecil/cli.hpp"

int main(int argc, char** argv) { return fecil::run_cli(argc, argv, std::cout, std::cerr); }
