#include "mmcoref/cli.hpp"

int main(int argc, char** argv) { return mmcoref::cli::run(argc, argv); }
