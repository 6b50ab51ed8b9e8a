#include "pat/cli.hpp"

int main(int argc, char** argv) { return pat::cli::cli_main(argc, argv); }
