#include "slanc/cli.hpp"

int main(int argc, char** argv) { return slanc::cli::run(argc, argv); }
