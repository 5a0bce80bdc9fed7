#pragma once

// File plumbing for pipeline artifacts: atomic writes, SHA-256 checksums,
// and an exclusive lock file per output directory.

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>

#include <openssl/evp.h>

#include "biasscope/common.hpp"

namespace biasscope {

namespace fs = std::filesystem;

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return out.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string file_sha256(const fs::path& p) { return sha256_hex(read_file(p)); }

// Writes through a temporary sibling and renames it over the target, so a
// failed writer never leaves a partial file behind.
inline void write_atomic(const fs::path& target, const std::function<void(std::ostream&)>& writer,
                         bool binary = false) {
  fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    try {
      writer(out);
    } catch (...) {
      out.close();
      fs::remove(tmp);
      throw;
    }
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw Error("failed writing " + target.string());
    }
  }
  fs::rename(tmp, target);
}

inline void write_atomic(const fs::path& target, const std::string& content) {
  write_atomic(target, [&](std::ostream& o) { o << content; });
}

// Exclusive lock over an output directory, released on destruction.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      if (errno == EEXIST)
        throw Error("output directory is locked by another run (" + path_.string() + "); remove it if stale");
      throw Error("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
    }
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

}  // namespace biasscope
