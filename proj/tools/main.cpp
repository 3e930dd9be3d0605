#include <cstdio>

int main() {
  std::puts("molbench: placeholder");
  return 0;
}
