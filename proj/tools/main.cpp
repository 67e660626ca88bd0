#include "cli.h"

int main(int argc, char** argv) { return covergen::cli::run(argc, argv); }
