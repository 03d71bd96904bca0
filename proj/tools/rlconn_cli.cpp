#include "rlconn/cli.hpp"

int main(int argc, char** argv) { return rlconn::cli_main(argc, argv); }
