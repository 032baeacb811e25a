#include "tmnrl/cli.hpp"

int main(int argc, char** argv) { return tmnrl::cli::run(argc, argv); }
