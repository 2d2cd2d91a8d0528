#include "rfulm/cli.hpp"

int main(int argc, char** argv) { return rfulm::cli::run(argc, argv); }
