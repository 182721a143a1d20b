#include "eitsim/cli.hpp"

int main(int argc, char** argv) { return eitsim::cli::run(argc, argv); }
