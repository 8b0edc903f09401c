#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "sirsa/types.hpp"

int main(int argc, char** argv) {
  sirsa::tune_allocator();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
