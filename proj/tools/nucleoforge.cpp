#include "nucleoforge/cli.hpp"

int main(int argc, char** argv) { return nucleoforge::run_cli(argc, argv); }
