#include <string>
#include <vector>

#include <u2reg/cli.hpp>

int main(int argc, char** argv) {
  return u2reg::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
