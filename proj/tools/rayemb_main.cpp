#include "rayemb/cli/commands.hpp"

int main(int argc, char** argv) { return rayemb::cli::run(argc, argv); }
