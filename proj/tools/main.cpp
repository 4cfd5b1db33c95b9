#include "deghost/cli.hpp"

int main(int argc, char** argv) { return deghost::run_cli(argc, argv); }
