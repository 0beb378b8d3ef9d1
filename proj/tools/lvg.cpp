#include "lvg/cli.hpp"

int main(int argc, char** argv) { return lvg::run_cli(argc, argv); }
