#include "treegress/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return treegress::run_cli(argc, argv, std::cout, std::cerr); }
