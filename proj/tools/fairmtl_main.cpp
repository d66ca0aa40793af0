#include <iostream>

#include "fairmtl/cli.hpp"

int main(int argc, char** argv) { return fairmtl::cli::Run(argc, argv, std::cout, std::cerr); }
