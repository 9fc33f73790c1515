#include <iostream>

#include "fundus/cli.hpp"

int main(int argc, char** argv) {
    return fundus::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
