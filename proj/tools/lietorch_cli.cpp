#include "lietorch/cli.hpp"

int main(int argc, char** argv) { return lietorch::cli::run(argc, argv); }
