#include "optpolicy/cli.hpp"

int main(int argc, char** argv) { return optpolicy::cli::run_cli(argc, argv); }
