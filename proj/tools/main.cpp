#include <iostream>

#include "cdsynth/run.hpp"

int main(int argc, char** argv) {
    return cdsynth::run_cli(argc, argv, std::cout, std::cerr);
}
