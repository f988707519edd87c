#include <iostream>

int main() {
    std::cout << "flowinfer: CLI not wired yet\n";
    return 0;
}
