#include "cli.hpp"

int main(int argc, char** argv) {
  return caps_ood::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
