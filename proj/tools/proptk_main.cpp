#include "proptk/cli.hpp"

int main(int argc, char** argv) { return proptk::run(argc, argv); }
