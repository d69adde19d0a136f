#include "mtmfg/cli.hpp"

int main(int argc, char** argv) { return mtmfg::cli::run(argc, argv); }
