#include <iostream>

#include "milforge/cli.hpp"

int main(int argc, char** argv) { return milforge::cli::run(argc, argv, std::cout, std::cerr); }
