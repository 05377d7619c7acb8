#include "povgen/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return povgen::run_cli(argc, argv, std::cout, std::cerr);
}
