#pragma once

#include <atomic>
#include <filesystem>
#include <string>

namespace fixtures {

// Scoped scratch directory under the system temp root; removed on
// destruction.
class TmpDir {
public:
  TmpDir() {
    static std::atomic<unsigned> counter{0};
    const auto base = std::filesystem::temp_directory_path();
    path_ = base / ("wrpn_test_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }

  ~TmpDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }

  TmpDir(const TmpDir&) = delete;
  TmpDir& operator=(const TmpDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

}  // namespace fixtures
