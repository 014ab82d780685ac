// SPDX-License-Identifier: Apache-2.0
#include "tmdc/cli.hpp"

int main(int argc, char** argv) { return tmdc::cli::run(argc, argv); }
