// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

namespace sieve {

/// Pixel box, half-open: [x_min, x_max) x [y_min, y_max).
struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  bool valid() const { return x_min < x_max && y_min < y_max; }
  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }
  bool contains(int x, int y) const { return x >= x_min && x < x_max && y >= y_min && y < y_max; }
  bool operator==(const BBox&) const = default;
};

std::string to_string(const BBox& b);

}  // namespace sieve
