#include <iostream>

#include "hocrf/commands.hpp"

int main(int argc, char** argv) { return hocrf::cli::run(argc, argv, std::cout, std::cerr); }
