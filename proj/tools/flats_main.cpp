#include "flats/cli.hpp"

int main(int argc, char** argv) { return flats::run_cli(argc, argv); }
