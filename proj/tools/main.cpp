#include <string>
#include <vector>

#include "raml/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return raml::cli::run(args);
}
