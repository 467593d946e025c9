// SPDX-License-Identifier: Apache-2.0

#include "commands.h"

#include <iostream>

int main(int argc, char **argv) {
    return lumisel::cli::RunCli(argc, argv, std::cout, std::cerr);
}
