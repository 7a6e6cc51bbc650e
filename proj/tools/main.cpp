#include "parameta/cli.hpp"

int main(int argc, char** argv) { return parameta::dispatch(argc, argv); }
