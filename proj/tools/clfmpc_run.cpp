#include "clfmpc/cli.hpp"

int main(int argc, char** argv) { return clfmpc::run(argc, argv); }
