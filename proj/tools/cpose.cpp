#include "cpose/cli.hpp"

int main(int argc, char** argv) { return cpose::cli::run(argc, argv); }
