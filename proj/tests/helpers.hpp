#pragma once

#include <torch/torch.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "semcd/semcd.hpp"

namespace testing_util {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "semcd") {
    std::string pattern = (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
    std::vector<char> buf(pattern.begin(), pattern.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

/// Default 8-sample toy set, generated once per process.
inline const semcd::DatasetManifest& toy_dataset() {
  static TempDir dir("semcd-toy");
  static semcd::DatasetManifest manifest = semcd::generate_synthetic_dataset(semcd::SyntheticSpec{}, dir / "data");
  return manifest;
}

struct CliResult {
  int exit_code = -1;
  std::string output;
};

/// Runs the semcd executable with `args` (already shell-quoted as needed).
inline CliResult run_cli(const std::string& args, const std::string& env = "") {
  TempDir scratch("semcd-cli");
  const auto log = scratch / "out.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string("'") + SEMCD_CLI_PATH + "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline bool same_bytes(const fs::path& a, const fs::path& b) { return read_file(a) == read_file(b); }

inline std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous().reshape(-1);
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

inline semcd::LabelMap random_labels(std::mt19937_64& rng, int h, int w, int num_classes) {
  semcd::LabelMap m(h, w);
  for (auto& v : m.data) v = static_cast<std::uint8_t>(rng() % static_cast<std::uint64_t>(num_classes));
  return m;
}

inline std::vector<int> as_ints(const semcd::LabelMap& m) { return {m.data.begin(), m.data.end()}; }

/// Fixed-seed random images in [0, 1], shape (B, 3, H, W).
inline torch::Tensor random_images(int b, int h, int w, std::uint64_t seed,
                                   torch::ScalarType dtype = torch::kFloat32) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::rand({b, 3, h, w}, gen, torch::TensorOptions().dtype(dtype));
}

}  // namespace testing_util
