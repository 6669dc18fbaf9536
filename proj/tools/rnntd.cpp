#include "rnntd/cli.hpp"

int main(int argc, char** argv) { return rnntd::cli::run(argc, argv); }
