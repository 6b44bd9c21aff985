#include <string>
#include <vector>

#include "vidcap/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return vidcap::run_cli(std::move(args));
}
