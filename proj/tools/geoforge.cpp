#include "geoforge/cli.hpp"

int main(int argc, char** argv) { return geoforge::cli::dispatch(argc, argv); }
