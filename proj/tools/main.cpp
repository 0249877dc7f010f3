#include "progress/cli/pipeline.hpp"

int main(int argc, char** argv) { return progress::cli::run(argc, argv); }
