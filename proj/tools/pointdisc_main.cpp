#include "pointdisc/cli.hpp"

int main(int argc, char** argv) { return pointdisc::run_cli(argc, argv); }
