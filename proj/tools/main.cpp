#include <string>
#include <vector>

#include "itfr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return itfr::run_cli(args);
}
