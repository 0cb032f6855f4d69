#include <iostream>
#include <string>
#include <vector>

#include "fsot/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return fsot::cli::run(args, std::cout, std::cerr);
}
