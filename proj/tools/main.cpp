#include "panelglmm/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return panelglmm::cli::main_entry(argc, argv, std::cout, std::cerr);
}
