#include "forcelab/cli.hpp"

int main(int argc, char** argv) { return forcelab::cli::dispatch(argc, argv); }
