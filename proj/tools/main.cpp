#include "cli.hpp"

int main(int argc, char** argv) { return distilforge::cli::run(argc, argv); }
