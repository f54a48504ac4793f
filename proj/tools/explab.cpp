#include <cstdio>

int main() {
  std::puts("explab: command-line front end not wired up yet");
  return 1;
}
