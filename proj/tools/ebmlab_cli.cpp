#include <iostream>

#include "ebmlab/harness.hpp"

int main(int argc, char** argv) { return ebmlab::run_cli(argc, argv, std::cout, std::cerr); }
