#include <cstdio>

#include "priorlens/common.hpp"

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::printf("priorlens %s\n", std::string(priorlens::kVersion).c_str());
  return 0;
}
