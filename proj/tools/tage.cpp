#include <cstdio>

int main() {
  std::puts("tage: pipeline CLI placeholder");
  return 0;
}
