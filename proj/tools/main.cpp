#include <string>
#include <vector>

#include "harmaug/cli/dispatch.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return harmaug::cli::dispatch(args);
}
