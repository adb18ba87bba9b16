#pragma once

namespace krls {

// Reserved vocabulary slots shared by corpus, model, and generation.
struct SpecialIds {
  int pad = 0;
  int bos = 1;
  int eos = 2;
  int sep = 3;
};

}  // namespace krls
