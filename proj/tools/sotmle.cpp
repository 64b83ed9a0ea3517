#include <iostream>

#include "sotmle/cli.hpp"

int main(int argc, char** argv) { return sotmle::run_cli(argc, argv, std::cout, std::cerr); }
