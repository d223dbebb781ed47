#include "stereopose/cli.hpp"

int main(int argc, char** argv) { return stereopose::run_cli(argc, argv); }
