#include "gridplan/cli.hpp"

int main(int argc, char** argv) { return gridplan::run_cli(argc, argv); }
