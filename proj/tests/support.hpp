#ifndef FG_TESTS_SUPPORT_HPP
#define FG_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fg/rng.hpp"
#include "fg/tensor.hpp"

namespace fgtest {

// Central finite differences against the engine's reverse-mode gradients.
// `forward` must rebuild the graph from the leaves' current values and
// return a scalar loss. Checks up to `max_coords` sampled coordinates per
// leaf and returns the worst relative error.
inline double max_grad_rel_error(const std::function<fg::Tensor()>& forward,
                                 std::vector<fg::Tensor> leaves, fg::Rng& rng,
                                 int max_coords = 24) {
  for (auto& leaf : leaves) leaf.zero_grad();
  fg::Tensor loss = forward();
  fg::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves)
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());

  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto vals = leaves[li].values();
    const int64_t n = static_cast<int64_t>(vals.size());
    std::vector<int64_t> coords;
    if (n <= max_coords) {
      for (int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int c = 0; c < max_coords; ++c)
        coords.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n))));
    }
    for (int64_t i : coords) {
      const double orig = vals[i];
      const double h = 1e-5 * std::max(1.0, std::abs(orig));
      vals[i] = orig + h;
      const double fp = forward().item();
      vals[i] = orig - h;
      const double fm = forward().item();
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[li][static_cast<size_t>(i)];
      const double rel = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Values with pairwise gaps >= ~0.01 and |v| >= 0.005, keeping relu/mfm/
// maxpool away from their kinks during finite differencing.
inline std::vector<double> distinct_values(fg::Rng& rng, int64_t n,
                                           double scale = 0.05) {
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double base = scale * (static_cast<double>(i) - static_cast<double>(n) / 2.0);
    if (std::abs(base) < scale) base += base >= 0.0 ? scale : -scale;
    v[static_cast<size_t>(i)] = base + rng.uniform(-0.3, 0.3) * scale * 0.3;
  }
  for (int64_t i = n; i > 1; --i)
    std::swap(v[static_cast<size_t>(i - 1)],
              v[static_cast<size_t>(rng.uniform_int(static_cast<uint64_t>(i)))]);
  return v;
}

inline std::vector<double> random_values(fg::Rng& rng, int64_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    const auto base = fs::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      fs::path p = base / (tag + "_" + std::to_string(i));
      std::error_code ec;
      if (fs::create_directory(p, ec)) {
        path_ = p.string();
        return;
      }
    }
    throw std::runtime_error("cannot create temp dir");
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (std::filesystem::path(path_) / name).string();
  }

 private:
  std::string path_;
};

}  // namespace fgtest

#endif  // FG_TESTS_SUPPORT_HPP
