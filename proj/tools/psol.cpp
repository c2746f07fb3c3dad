#include "psol/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return psol::run_cli(argc, argv, std::cout, std::cerr);
}
