// Command line entry point. Subcommands are implemented in the core library;
// this file only wires up argument parsing.

#include <cstdio>

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::fprintf(stderr, "ipsampler: command line surface not wired up yet\n");
  return 1;
}
