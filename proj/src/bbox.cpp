// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/bbox.hpp"

#include <fmt/format.h>

namespace sieve {

std::string to_string(const BBox& b) { return fmt::format("[{}, {}, {}, {})", b.x_min, b.y_min, b.x_max, b.y_max); }

}  // namespace sieve
