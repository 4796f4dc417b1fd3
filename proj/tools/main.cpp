#include <string>
#include <vector>

#include "patchdev/cli.hpp"

int main(int argc, char** argv) {
  return patchdev::cli::run(std::vector<std::string>(argv, argv + argc));
}
