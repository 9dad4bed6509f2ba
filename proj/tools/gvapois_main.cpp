#include "gvapois/cli.hpp"

int main(int argc, char** argv) { return gvapois::cli::dispatch(argc, argv); }
