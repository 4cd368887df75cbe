#include "sdvae/cli.hpp"

int main(int argc, char** argv) { return sdvae::run_cli(argc, argv); }
