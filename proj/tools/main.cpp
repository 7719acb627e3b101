#include <string>
#include <vector>

#include "diffplan/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return diffplan::run_cli(args);
}
