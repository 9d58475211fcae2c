// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "locas/cli.hpp"

int main(int argc, char** argv) { return locas::cli::run(argc, argv, std::cout, std::cerr); }
