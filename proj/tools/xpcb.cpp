#include <string>
#include <vector>

#include "xpcb/cli.hpp"

int main(int argc, char** argv) {
    return xpcb::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
