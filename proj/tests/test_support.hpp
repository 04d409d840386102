#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "planrl/tensor.hpp"

namespace testing_support {

struct GradientCheck {
  bool ok = true;
  double worst_relative = 0.0;
  std::string where;
};

/// Central differences over every parameter of `net`.
/// Relative error is |a - f| / max(|a|, |f|, floor).
inline GradientCheck check_gradient(const planrl::nn::Mlp& net, const planrl::nn::Gradients& analytic,
                                    const std::function<double(const planrl::nn::Mlp&)>& loss,
                                    double tolerance = 1e-4, double h = 1e-5, double floor = 1e-4) {
  GradientCheck out;
  planrl::nn::Mlp probe = net;
  auto visit = [&](double& param, double a, const std::string& name) {
    const double saved = param;
    param = saved + h;
    const double up = loss(probe);
    param = saved - h;
    const double down = loss(probe);
    param = saved;
    const double fd = (up - down) / (2 * h);
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
    if (rel > out.worst_relative) {
      out.worst_relative = rel;
      out.where = name;
    }
  };
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    auto& layer = probe.layers[l];
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
      visit(layer.weight.data()[i], analytic.weight[l].data()[i], "W" + std::to_string(l) + "[" + std::to_string(i) + "]");
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
      visit(layer.bias[i], analytic.bias[l][i], "b" + std::to_string(l) + "[" + std::to_string(i) + "]");
  }
  out.ok = out.worst_relative <= tolerance;
  return out;
}

/// Layer-by-layer scalar loops, independent of the Eigen code path.
inline std::vector<double> scalar_forward(const planrl::nn::Mlp& net, std::vector<double> x) {
  using planrl::nn::Activation;
  for (const auto& l : net.layers) {
    std::vector<double> y(static_cast<std::size_t>(l.out_dim()));
    for (Eigen::Index o = 0; o < l.out_dim(); ++o) {
      double acc = l.bias[o];
      for (Eigen::Index i = 0; i < l.in_dim(); ++i) acc += l.weight(o, i) * x[static_cast<std::size_t>(i)];
      if (l.activation == Activation::tanh) acc = std::tanh(acc);
      if (l.activation == Activation::relu) acc = acc > 0 ? acc : 0.0;
      y[static_cast<std::size_t>(o)] = acc;
    }
    x = std::move(y);
  }
  return x;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("planrl-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
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

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout only
};

/// Runs a shell command; stderr goes to /dev/null.
inline CommandResult run_command(const std::string& cmd) {
  CommandResult r;
  FILE* pipe = ::popen((cmd + " 2>/dev/null").c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct PipelineRound {
  bool ok = true;
  std::string failed_command;
  std::map<std::string, std::uint64_t> hashes;  // output file -> FNV-1a
};

/// Every CLI subcommand once, writing under root. config is a JSON file
/// small enough for a quick train and sweep.
inline PipelineRound run_cli_pipeline(const std::string& cli, const std::filesystem::path& config,
                                      const std::filesystem::path& root) {
  const std::string cfg = " --config " + config.string();
  const std::string o = root.string() + "/";
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"gen-demos --n 3 --seed 5 --out " + o + "demos.txt", "demos.txt"},
      {"gen-labels --samples 400 --seed 5 --out " + o + "labels.txt", "labels.txt"},
      {"train-supervised --kind bc --dataset " + o + "demos.txt --seed 5 --out " + o + "bc.bin", "bc.bin"},
      {"train-supervised --kind modenet --dataset " + o + "labels.txt --seed 5 --out " + o + "modenet.bin", "modenet.bin"},
      {"train-supervised --kind navnet --dataset " + o + "labels.txt --seed 5 --out " + o + "navnet.bin", "navnet.bin"},
      {"train" + cfg + " --variant PLANRL --seed 5 --out " + o + "run", "run/metrics.csv"},
      {"eval --checkpoint " + o + "run/bundle.bin --episodes 5 --seed 5 --out " + o + "eval.csv", "eval.csv"},
      {"sweep" + cfg + " --seeds 1 --jobs 2 --out " + o + "sweep", "sweep/metrics.csv"},
      {"plot " + o + "sweep/aggregate.csv --out " + o + "plots", "plots/compare_train.svg"},
  };
  PipelineRound r;
  for (const auto& [args, file] : steps) {
    const auto res = run_command(cli + " " + args);
    const auto bytes = read_file(root / file);
    if (res.exit_code != 0 || bytes.empty()) {
      r.ok = false;
      r.failed_command = args;
      return r;
    }
    r.hashes[file] = fnv1a(bytes);
  }
  for (const char* extra : {"run/eval.csv", "run/bundle.bin", "sweep/eval.csv", "sweep/aggregate.csv"})
    r.hashes[extra] = fnv1a(read_file(root / extra));
  return r;
}

}  // namespace testing_support
