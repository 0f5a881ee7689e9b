#include "blockmem/cli.hpp"

int main(int argc, char** argv) { return blockmem::cli::run_main(argc, argv); }
