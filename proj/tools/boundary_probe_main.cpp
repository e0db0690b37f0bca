#include "bprobe/cli.hpp"

int main(int argc, char** argv) { return bprobe::cli::run(argc, argv); }
