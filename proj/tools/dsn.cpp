#include <iostream>

#include "dsn/cli.hpp"

int main(int argc, char** argv) { return dsn::dispatch(argc, argv, std::cout, std::cerr); }
