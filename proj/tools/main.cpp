#include <iostream>

#include "mixsign/cli/cli.h"

int main(int argc, char** argv) { return mixsign::run_cli(argc, argv, std::cout, std::cerr); }
