// Placeholder entry point; the full command-line interface is assembled once
// the library modules are in place.
#include <iostream>

int main() {
  std::cout << "hyperkick: command-line interface under construction\n";
  return 0;
}
