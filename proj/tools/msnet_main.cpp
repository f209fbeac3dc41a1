#include <vector>

#include "msnet/cli.hpp"

int main(int argc, char** argv) {
  return msnet::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
