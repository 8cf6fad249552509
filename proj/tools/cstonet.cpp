#include "cstonet/cli.hpp"

int main(int argc, char** argv) { return cstonet::cli::run(argc, argv); }
