#include <cstdio>

int main() {
    std::puts("artifit: command-line interface not wired up yet");
    return 1;
}
