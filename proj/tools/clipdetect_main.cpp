#include <iostream>

#include "clipdetect/commands.hpp"

int main(int argc, char** argv) { return clipdetect::run_cli(argc, argv, std::cout, std::cerr); }
