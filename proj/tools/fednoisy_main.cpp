#include "fednoisy/commands.hpp"

int main(int argc, char** argv) { return fednoisy::cli::run_main(argc, argv); }
