#include "trailrun/cli.hpp"

int main(int argc, char** argv) { return trailrun::cli::run(argc, argv); }
