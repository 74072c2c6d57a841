#include "commands.hpp"

int main(int argc, char** argv) { return mvlab::cli::run(argc, argv); }
