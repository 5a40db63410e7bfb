#include "cli.hpp"

int main(int argc, char** argv) { return attralign::cli::run(argc, argv); }
