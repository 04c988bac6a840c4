#include "skinnet/cli.hpp"

int main(int argc, char** argv) { return skinnet::cli::run(argc, argv); }
