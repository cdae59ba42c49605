#include "mpcflow/harness.hpp"

int main(int argc, char** argv) { return mpcflow::harness::cli_main(argc, argv); }
