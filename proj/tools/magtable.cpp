#include "magtable/cli.hpp"

int main(int argc, char** argv) { return magtable::cli::run(argc, argv); }
