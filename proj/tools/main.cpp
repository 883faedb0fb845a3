#include "fedvlf/cli/commands.hpp"

int main(int argc, char** argv) { return fedvlf::cli::run(argc, argv); }
