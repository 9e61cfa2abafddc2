#include <iostream>

#include "changer/cli.hpp"

int main(int argc, char** argv) { return changer::run_cli(argc, argv, std::cout, std::cerr); }
