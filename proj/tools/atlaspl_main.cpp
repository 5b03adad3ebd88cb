#include "atlaspl/cli.hpp"

int main(int argc, char** argv) { return atlaspl::cli::run_subcommand(argc, argv); }
