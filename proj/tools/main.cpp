#include "intervalic/cli.hpp"

int main(int argc, char** argv) { return intervalic::cli::run(argc, argv); }
