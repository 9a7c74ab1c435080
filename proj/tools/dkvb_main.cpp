#include "dkvb/cli.hpp"

int main(int argc, char** argv) { return dkvb::dispatch(argc, argv); }
