#include "onedse/cli.hpp"

int main(int argc, char** argv) { return onedse::cli::run(argc, argv); }
