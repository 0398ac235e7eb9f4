#include "tabmatch/cli.hpp"

int main(int argc, char** argv) { return tabmatch::cli_main(argc, argv); }
