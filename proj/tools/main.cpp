#include <iostream>

#include "cli.hpp"
#include "pwtp/runtime.hpp"

int main(int argc, char** argv) {
  pwtp::configure_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return pwtp::cli::dispatch(args, std::cout, std::cerr);
}
