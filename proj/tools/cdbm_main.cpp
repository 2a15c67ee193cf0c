#include "cdbm/cli.hpp"

int main(int argc, char** argv) { return cdbm::run_cli(argc, argv); }
