// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef VOLPOSE_CORE_HASH_HPP
#define VOLPOSE_CORE_HASH_HPP

#include <filesystem>
#include <string>
#include <string_view>

namespace volpose {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace volpose

#endif  // VOLPOSE_CORE_HASH_HPP
