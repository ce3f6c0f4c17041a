// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "sieve/toy_vlm.hpp"

namespace sieve::vlm {

/// Little-endian checkpoint: magic "SMDL", format version, the model shape,
/// seed, weight version and the flat parameter vector as float64.
std::string serialize_model(const Model& model);
/// Throws FormatError on malformed bytes or a layout that does not match the
/// stored shape.
Model deserialize_model(const std::string& bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace sieve::vlm
