// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace sieve::cli {

/// Runs one subcommand. Returns 0 on success, 1 on a domain error and 2 on a
/// usage error (bad flag, unknown config key); diagnostics go to stderr.
int dispatch(int argc, const char* const* argv);

}  // namespace sieve::cli
