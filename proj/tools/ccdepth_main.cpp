#include "ccdepth/cli.hpp"

int main(int argc, char** argv) { return ccdepth::cli::run(argc, argv); }
