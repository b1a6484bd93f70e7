// Reads the request, complains on stderr and dies with a nonzero status.
#include <cstdlib>
#include <iostream>
#include <string>

int main() {
  std::string line;
  std::getline(std::cin, line);
  std::cerr << "Traceback (most recent call last):\n  boom\nRuntimeError: stub crashed\n";
  return 3;
}
