// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return dsasrgs::cli::run(argc, argv, std::cout, std::cerr);
}
