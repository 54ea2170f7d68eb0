#include "savc_tools/cli.hpp"

int main(int argc, char** argv) { return savc::cli_main(argc, argv); }
