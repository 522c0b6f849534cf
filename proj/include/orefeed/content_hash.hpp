#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace orefeed {

// Hex SHA-1 of "blob <size>\0<bytes>", matching `git hash-object`.
std::string git_blob_hash(std::string_view bytes);
std::string git_blob_hash_file(const std::filesystem::path& path);
// Hash over "<hash> <name>\n" lines in the given order.
std::string combined_hash(const std::vector<std::pair<std::string, std::string>>& named_hashes);

}  // namespace orefeed
