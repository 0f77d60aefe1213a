#include "avvp/cli.hpp"

int main(int argc, char** argv) { return avvp::cli_main(argc, argv); }
