// Binary entry point; all behavior lives in the library CLI.

#include "postrl/cli.hpp"

int main(int argc, char** argv) { return postrl::run_cli(argc, argv); }
