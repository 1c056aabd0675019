#include "cherenkov/cli.hpp"

int main(int argc, char** argv) { return cherenkov::cli::execute(argc, argv); }
