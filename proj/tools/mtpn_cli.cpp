#include "mtpn/cli.hpp"

int main(int argc, char** argv) { return mtpn::cli::dispatch(argc, argv); }
