#include "msd/harness.hpp"

int main(int argc, char** argv) { return msd::harness::cli_main(argc, argv); }
