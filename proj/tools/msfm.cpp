#include <iostream>

#include "msfm/cli/commands.hpp"

int main(int argc, char** argv) { return msfm::cli::run(argc, argv, std::cout, std::cerr); }
