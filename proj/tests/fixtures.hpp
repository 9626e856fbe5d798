#pragma once

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>

#include "latentdemo/stub_backend.hpp"

namespace fixtures {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "ldtest-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline bool python_available() { return std::system("python3 -c pass >/dev/null 2>&1") == 0; }

inline std::unique_ptr<latentdemo::StubBackend> stub(const std::string& json) {
  return latentdemo::StubBackend::from_json(json);
}

/// Four-piece vocabulary with uniform conditionals everywhere.
inline std::unique_ptr<latentdemo::StubBackend> uniform4() {
  return stub(R"({"vocab": ["a", "b", "c", "d"], "embedding_dim": 4, "context_budget": 2048})");
}

}  // namespace fixtures
