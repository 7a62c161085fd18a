#include <cstdio>

int main() {
    std::puts("pose-sim: not wired up yet");
    return 2;
}
