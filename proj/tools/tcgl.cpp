#include "cli.hpp"

int main(int argc, char** argv) { return tcgl::cli::run(argc, argv); }
