#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "ssmuse/array.hpp"

int main(int argc, char** argv) {
  ssmuse::configure_allocator();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
