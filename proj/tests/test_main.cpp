#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <torch/torch.h>

#include "deghost/log.hpp"

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    deghost::log_quiet() = true;
    doctest::Context context(argc, argv);
    return context.run();
}
