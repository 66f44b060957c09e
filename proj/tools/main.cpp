#include <iostream>

#include "liitr/cli.hpp"

int main(int argc, char** argv) { return liitr::run_cli(argc, argv, std::cout, std::cerr); }
