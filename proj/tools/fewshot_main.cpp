#include "fewshot/commands.hpp"

int main(int argc, char** argv) { return fewshot::run_cli(argc, argv); }
