#include "doctest.h"

#include "latentdemo/common.hpp"

using namespace latentdemo;

TEST_CASE("sha256 of known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("incremental hasher matches one-shot digest") {
  Hasher h;
  h.update("a").update("bc");
  CHECK(h.hex() == sha256_hex("abc"));
}

TEST_CASE("length-prefixed fields do not alias") {
  Hasher a, b;
  a.field("ab").field("c");
  b.field("a").field("bc");
  CHECK(a.hex() != b.hex());
}

TEST_CASE("derive_seed is stable and label sensitive") {
  CHECK(derive_seed(7, "train", "reverse") == derive_seed(7, "train", "reverse"));
  CHECK(derive_seed(7, "train", "reverse") != derive_seed(7, "train", "arith"));
  CHECK(derive_seed(7, "train", "reverse") != derive_seed(8, "train", "reverse"));
  CHECK(derive_seed(7, "train") != derive_seed(7, "select"));
}

TEST_CASE("error kinds survive slicing to the base class") {
  try {
    throw OverflowError("too long");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::overflow);
    CHECK(std::string(e.what()) == "too long");
  }
}
