#include "peer/cli.hpp"

int main(int argc, char** argv) { return peer::run_cli(argc, argv); }
