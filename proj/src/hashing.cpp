#include "casc/hashing.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include <openssl/evp.h>

#include "casc/errors.hpp"

namespace casc {

namespace fs = std::filesystem;

std::string sha256_hex(std::span<const uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

std::string tree_hash(const fs::path& base, const std::vector<std::string>& roots) {
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& root : roots) {
    const fs::path dir = base / root;
    if (fs::is_regular_file(dir)) {
      entries.emplace_back(root, sha256_file(dir));
      continue;
    }
    if (!fs::is_directory(dir)) continue;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      entries.emplace_back(fs::relative(e.path(), base).generic_string(), sha256_file(e.path()));
    }
  }
  std::sort(entries.begin(), entries.end());
  std::string listing;
  for (const auto& [path, hash] : entries) listing += hash + "  " + path + "\n";
  return sha256_hex({reinterpret_cast<const uint8_t*>(listing.data()), listing.size()});
}

std::string source_tree_hash() {
#ifdef CASC_SOURCE_DIR
  const fs::path base(CASC_SOURCE_DIR);
  if (fs::exists(base / "src")) {
    return tree_hash(base, {"CMakeLists.txt", "include", "src", "tools"});
  }
#endif
  return "unknown";
}

}  // namespace casc
